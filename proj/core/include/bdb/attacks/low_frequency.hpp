#pragma once

#include "bdb/dataset.hpp"
#include "bdb/models.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <functional>

namespace bdb::attacks {

/// Maps a batch of one input (any layout the function expects) to 1 x K logits.
using LogitFn = std::function<torch::Tensor(const torch::Tensor&)>;

struct DeepFoolResult {
  torch::Tensor perturbation;  // same shape as the input, already scaled by (1 + overshoot)
  int64_t iterations = 0;
  bool fooled = false;
  int64_t original_label = 0;
  int64_t final_label = 0;
};

/// Linearised minimal step from `x` (batch of one) towards the nearest
/// decision boundary: |f_l| / ||w_l||^2 * w_l with the usual 1e-4 slack.
torch::Tensor deepfool_step(const LogitFn& f, const torch::Tensor& x);

/// Multi-class DeepFool: repeat deepfool_step until the label flips or
/// `max_iter` steps have been taken.
DeepFoolResult deepfool(const LogitFn& f, const torch::Tensor& x, double overshoot, int64_t max_iter);

/// Orthonormal DCT-II matrix (rows are basis vectors).
torch::Tensor dct_matrix(int64_t n);
/// 2-D DCT of each channel of an H x W x C map, and its inverse.
torch::Tensor dct2(const torch::Tensor& hwc);
torch::Tensor idct2(const torch::Tensor& hwc);
/// Zeroes every DCT coefficient outside the top-left
/// ceil(keep * H) x ceil(keep * W) block.
torch::Tensor low_pass(const torch::Tensor& hwc, double keep_fraction);
torch::Tensor low_pass_mask(int64_t h, int64_t w, double keep_fraction);

struct LfConfig {
  double fooling_rate = 0.2;
  double overshoot = 0.02;
  int64_t deepfool_iters = 200;
  int64_t term_iters = 50;
  int64_t n_samples = 100;
  double xi = 0.1;             // L-inf budget of the universal perturbation
  double keep_fraction = 0.25;  // side of the kept DCT block
  uint64_t seed = 0;

  nlohmann::json to_json() const;
  static LfConfig from_json(const nlohmann::json& j);
};

struct LfTrigger {
  torch::Tensor trigger;  // H x W x C, low-pass
  double fooling_rate = 0.0;
  int64_t passes = 0;
  bool reached = false;  // false: best-effort trigger, fooling rate unmet
};

/// Universal perturbation from iterated DeepFool over `n_samples` samples of
/// `pool`, projected to the low-frequency subspace after every update.
LfTrigger generate_lf_trigger(Classifier& surrogate, const LabeledDataset& pool, const LfConfig& cfg);

/// Fraction of `images` (N x H x W x C) whose prediction changes when
/// `trigger` is added.
double fooling_rate(Classifier& model, const torch::Tensor& images, const torch::Tensor& trigger);

}  // namespace bdb::attacks
