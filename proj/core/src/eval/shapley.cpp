#include "bdb/eval/analysis.hpp"

#include "bdb/error.hpp"
#include "bdb/tensor_io.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace bdb::eval {

ShapleyEstimate shapley_sample(const CoalitionValue& value, int64_t n_players, int64_t n_samples, uint64_t seed) {
  if (n_samples < 1) throw ArgumentError("shapley: n_samples must be at least 1");
  if (n_players < 1) throw ArgumentError("shapley: need at least one player");
  std::mt19937_64 rng(seed);
  std::vector<int64_t> order(static_cast<size_t>(n_players));
  std::iota(order.begin(), order.end(), int64_t{0});
  auto sum = torch::zeros({n_players}, torch::kFloat64);
  auto sum_sq = torch::zeros({n_players}, torch::kFloat64);
  ShapleyEstimate est;
  for (int64_t s = 0; s < n_samples; ++s) {
    std::shuffle(order.begin(), order.end(), rng);
    // Prefix coalitions of this ordering: row k holds the first k players.
    auto coalitions = torch::zeros({n_players + 1, n_players}, torch::kFloat32);
    for (int64_t k = 1; k <= n_players; ++k) {
      coalitions[k].copy_(coalitions[k - 1]);
      coalitions[k][order[static_cast<size_t>(k - 1)]] = 1.0f;
    }
    auto v = value(coalitions).to(torch::kFloat64).flatten();
    if (v.size(0) != n_players + 1) throw ArgumentError("shapley: value function returned the wrong count");
    auto marginal = torch::empty({n_players}, torch::kFloat64);
    for (int64_t k = 1; k <= n_players; ++k)
      marginal[order[static_cast<size_t>(k - 1)]] = v[k] - v[k - 1];
    sum += marginal;
    sum_sq += marginal.pow(2);
    if (s == 0) {
      est.empty = v[0].item<double>();
      est.full = v[n_players].item<double>();
    }
  }
  const double n = static_cast<double>(n_samples);
  est.values = sum / n;
  auto var = n > 1 ? ((sum_sq - n * est.values.pow(2)) / (n - 1.0)).clamp_min(0.0) : torch::zeros_like(sum);
  est.stderr_ = (var / n).sqrt();
  return est;
}

torch::Tensor patch_index(int64_t height, int64_t width, int64_t grid) {
  if (grid < 1 || grid > std::min(height, width)) throw ArgumentError("patch grid must lie in [1, min(H, W)]");
  auto rows = (torch::arange(height) * grid).div(height, "floor");
  auto cols = (torch::arange(width) * grid).div(width, "floor");
  return rows.unsqueeze(1) * grid + cols.unsqueeze(0);
}

SaliencyMap shapley_map(Classifier& model, const torch::Tensor& image_hwc, int64_t target_class, int64_t n_samples,
                        int64_t grid, const torch::Tensor& baseline_hwc, uint64_t seed) {
  if (image_hwc.dim() != 3 || baseline_hwc.sizes() != image_hwc.sizes())
    throw ArgumentError("shapley_map: image and baseline must both be H x W x C");
  const auto h = image_hwc.size(0), w = image_hwc.size(1);
  auto pidx = patch_index(h, w, grid);
  const auto players = grid * grid;
  auto onehot = torch::one_hot(pidx.flatten(), players).to(torch::kFloat32);  // HW x P
  auto img = image_hwc.to(torch::kFloat32), base = baseline_hwc.to(torch::kFloat32);
  model->eval();
  auto value = [&](const torch::Tensor& coalitions) {
    torch::NoGradGuard guard;
    auto pixel_on = torch::matmul(coalitions, onehot.t()).view({-1, h, w, 1});  // K x H x W x 1
    auto mixed = pixel_on * img.unsqueeze(0) + (1.0f - pixel_on) * base.unsqueeze(0);
    return model->forward(to_nchw(mixed)).select(1, target_class);
  };
  auto est = shapley_sample(value, players, n_samples, seed);
  SaliencyMap m;
  m.method = "shapley";
  m.target_class = target_class;
  m.n_samples = n_samples;
  m.patch_values = est.values;
  m.patch_stderr = est.stderr_;
  m.values = est.values.index_select(0, pidx.flatten()).view({h, w});
  return m;
}

void save_saliency_ppm(const SaliencyMap& map, const std::filesystem::path& path, const torch::Tensor& image_hwc) {
  auto v = map.values.to(torch::kFloat32);
  const double lo = v.min().item<double>(), hi = v.max().item<double>();
  auto norm = hi > lo ? (v - lo) / (hi - lo) : torch::zeros_like(v);
  auto heat = torch::stack({norm, torch::zeros_like(norm), 1.0f - norm}, 2);
  if (image_hwc.defined()) heat = 0.5f * heat + 0.5f * image_hwc.to(torch::kFloat32);
  save_ppm(heat.clamp(0.0, 1.0), path);
}

}  // namespace bdb::eval
