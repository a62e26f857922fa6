#pragma once

#include "bdb/checkpoint.hpp"
#include "bdb/dataset.hpp"
#include "bdb/defenses/suspicion.hpp"
#include "bdb/training.hpp"

#include <torch/torch.h>

#include <unordered_set>

namespace bdb::defenses {

struct AcConfig {
  int64_t n_dims = 10;
  double size_threshold = 0.35;  // smaller cluster flagged below this relative size
  std::string layer = "penultimate";
  int64_t ica_max_iter = 400;
  double ica_tol = 1e-5;
  int64_t kmeans_max_iter = 300;
  uint64_t seed = 0;
};

struct SpectralConfig {
  double percentile = 85.0;
  std::string layer = "penultimate";
};

struct TwoMeans {
  std::vector<int> assignment;  // 0 or 1 per row
  int64_t size0 = 0, size1 = 0;
  int iterations = 0;
};

/// Lloyd's 2-means on N x D rows. Seeds: the row nearest the mean, then the
/// row farthest from it; every tie (seed choice or assignment) goes to the
/// row with the lowest id, and to cluster 0.
TwoMeans two_means(const torch::Tensor& x, const std::vector<int64_t>& ids, int64_t max_iter = 300);

struct IcaResult {
  torch::Tensor sources;  // N x k
  bool converged = false;
  bool used_pca = false;
  int64_t components = 0;
};

/// Symmetric FastICA (log-cosh contrast) on PCA-whitened data, reduced to
/// at most `k` components. Falls back to the whitened principal components
/// when the fixed-point iteration does not converge.
IcaResult fast_ica(const torch::Tensor& x, int64_t k, uint64_t seed, int64_t max_iter = 400, double tol = 1e-5);

/// Per-class: project features to `n_dims` independent components, split
/// with 2-means, flag the smaller cluster when its share is below
/// `size_threshold`.
SuspicionReport ac_detect_features(const torch::Tensor& features, const torch::Tensor& labels,
                                   const std::vector<int64_t>& ids, const AcConfig& cfg);
SuspicionReport ac_detect(const ModelCheckpoint& model, const LabeledDataset& poisoned_train, const AcConfig& cfg);

/// Squared projection of each centred row onto the top right-singular
/// vector. All zeros when the rows have no spread.
torch::Tensor spectral_scores(const torch::Tensor& features);

/// Nearest-rank percentile: the smallest value v with at least p% of the
/// sample <= v.
double nearest_rank_percentile(std::vector<double> values, double p);

/// Per-class: flags rows whose score is at or above the class's
/// nearest-rank `percentile`. Classes with zero spread are skipped.
SuspicionReport spectral_detect_features(const torch::Tensor& features, const torch::Tensor& labels,
                                         const std::vector<int64_t>& ids, const SpectralConfig& cfg);
SuspicionReport spectral_detect(const ModelCheckpoint& model, const LabeledDataset& poisoned_train,
                                const SpectralConfig& cfg);

/// Fresh training on the poisoned set minus `suspected`.
ModelCheckpoint retrain_without(const LabeledDataset& poisoned_train, const std::vector<int64_t>& suspected, Arch arch,
                                const TrainConfig& cfg, const std::string& method,
                                const LabeledDataset* test = nullptr);

}  // namespace bdb::defenses
