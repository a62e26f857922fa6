#pragma once

#include "bdb/dataset.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <vector>

namespace bdb::testing {

// Single-class feature matrix: `n_major` rows from N(0, I) and `n_minor`
// rows from N(mu, I) with |mu| = separation (in units of sigma).
struct PlantedClusters {
  torch::Tensor features;  // N x D, float64
  torch::Tensor labels;    // all zero
  std::vector<int64_t> ids;
  std::vector<int64_t> planted_ids;  // the minor cluster
  torch::Tensor mean_major, mean_minor;
};
PlantedClusters planted_gaussians(int64_t n_major, int64_t n_minor, int64_t dims, double separation, uint64_t seed);

// Rows that a classifier with access to the true centres assigns to the
// minor cluster: the brute-force reference for 2-means on the fixture.
std::vector<int64_t> nearest_centre_oracle(const PlantedClusters& fx);

// n_in rows from N(0, I) plus n_out rows shifted by `shift` along a random
// unit axis.
struct PlantedOutliers {
  torch::Tensor features;  // float64
  torch::Tensor labels;
  std::vector<int64_t> ids;
  std::vector<int64_t> outlier_ids;
};
PlantedOutliers planted_outliers(int64_t n_in, int64_t n_out, int64_t dims, double shift, uint64_t seed);

// Squared projection on the top eigenvector of the centred covariance,
// computed through a symmetric eigendecomposition instead of an SVD.
torch::Tensor eigen_outlier_scores(const torch::Tensor& features);

// Coalition game v(S) = sum_i a_i [i in S] + sum_i b_i [i not in S]
//                      + sum_{i<j} c_ij [i, j in S].
// Exact Shapley values: a_i - b_i + sum_j c_ij / 2.
struct AdditiveGame {
  std::vector<double> a, b;
  std::vector<std::vector<double>> c;  // symmetric, zero diagonal
  torch::Tensor value(const torch::Tensor& coalitions) const;
  std::vector<double> exact_shapley() const;
  double full() const;
  double empty() const;
};
AdditiveGame random_game(int64_t players, double interaction_scale, uint64_t seed);

// Natural-looking 32 x 32 x 3 images in [0, 1] for the trigger properties.
torch::Tensor fixture_images(int64_t n, uint64_t seed);

}  // namespace bdb::testing
