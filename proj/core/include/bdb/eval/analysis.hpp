#pragma once

#include "bdb/models.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace bdb::eval {

struct TsneConfig {
  double perplexity = 30.0;
  int64_t iterations = 1000;
  int64_t exaggeration_iters = 250;
  double exaggeration = 12.0;
  double learning_rate = 200.0;
  uint64_t seed = 0;
};

/// Exact t-SNE (dense affinities). Returns N x 2.
torch::Tensor tsne_embed(const torch::Tensor& features, const TsneConfig& cfg = {});

/// Scatter of an embedding coloured by class; poisoned points drawn as crosses.
void save_tsne_plot(const torch::Tensor& points, const torch::Tensor& labels, const torch::Tensor& poison_flags,
                    const std::filesystem::path& path, const std::string& title);

struct SaliencyMap {
  torch::Tensor values;  // H x W, float64
  std::string method;    // gradcam | shapley
  int64_t target_class = 0;
  std::string layer;     // gradcam only
  int64_t n_samples = 0; // shapley only
  torch::Tensor patch_values;  // shapley: one value per patch, row-major over the grid
  torch::Tensor patch_stderr;  // shapley: standard error of each patch value
};

/// Class-logit Grad-CAM at a feature stage, bilinearly upsampled to the
/// image size and max-normalized. A map that is zero everywhere is returned
/// as is.
SaliencyMap grad_cam(Classifier& model, const torch::Tensor& image_hwc, int64_t target_class,
                     const std::string& layer);

/// Scores a batch of coalitions (K x n_players, 1 = player present).
using CoalitionValue = std::function<torch::Tensor(const torch::Tensor& coalitions)>;

struct ShapleyEstimate {
  torch::Tensor values;  // n_players
  torch::Tensor stderr_; // n_players
  double full = 0.0, empty = 0.0;  // v(all players), v(no players)
};

/// Permutation-sampling Shapley values: mean marginal contribution of each
/// player over `n_samples` random orderings.
ShapleyEstimate shapley_sample(const CoalitionValue& value, int64_t n_players, int64_t n_samples, uint64_t seed);

/// Image patches on a `grid` x `grid` partition as players; absent patches
/// come from `baseline` (HWC). The score is the target-class logit.
SaliencyMap shapley_map(Classifier& model, const torch::Tensor& image_hwc, int64_t target_class, int64_t n_samples,
                        int64_t grid, const torch::Tensor& baseline_hwc, uint64_t seed = 0);
/// Grid patch index of every pixel (H x W, int64).
torch::Tensor patch_index(int64_t height, int64_t width, int64_t grid);

/// Mean activation per channel (stage layers) or per unit (penultimate,
/// logits) over a batch of N x H x W x C images.
torch::Tensor activation_profile(Classifier& model, const torch::Tensor& images_nhwc, const std::string& layer);

/// Heat map rendered as a greyscale-to-red PPM, optionally over the image.
void save_saliency_ppm(const SaliencyMap& map, const std::filesystem::path& path,
                       const torch::Tensor& image_hwc = {});

}  // namespace bdb::eval
