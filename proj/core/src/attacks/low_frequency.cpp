#include "bdb/attacks/low_frequency.hpp"

#include "bdb/attacks/triggers.hpp"
#include "bdb/error.hpp"
#include "bdb/training.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

namespace bdb::attacks {

torch::Tensor deepfool_step(const LogitFn& f, const torch::Tensor& x) {
  auto xi = x.detach().clone().requires_grad_(true);
  auto logits = f(xi);
  if (logits.dim() != 2 || logits.size(0) != 1) throw ArgumentError("deepfool expects a batch of one");
  const auto k = logits.size(1);
  const auto k0 = logits.argmax(1).item<int64_t>();
  auto g0 = torch::autograd::grad({logits[0][k0]}, {xi}, {}, true)[0];
  double best = std::numeric_limits<double>::infinity();
  torch::Tensor step;
  for (int64_t c = 0; c < k; ++c) {
    if (c == k0) continue;
    auto gc = torch::autograd::grad({logits[0][c]}, {xi}, {}, true)[0];
    auto w = gc - g0;
    const double fk = (logits[0][c] - logits[0][k0]).item<double>();
    const double wn = w.norm().item<double>();
    if (wn == 0.0) continue;
    const double dist = std::abs(fk) / wn;
    if (dist < best) {
      best = dist;
      step = w * ((std::abs(fk) + 1e-4) / (wn * wn));
    }
  }
  if (!step.defined()) return torch::zeros_like(x);
  return step.detach();
}

DeepFoolResult deepfool(const LogitFn& f, const torch::Tensor& x, double overshoot, int64_t max_iter) {
  DeepFoolResult r;
  int64_t k0 = 0;
  {
    torch::NoGradGuard guard;
    k0 = f(x).argmax(1).item<int64_t>();
  }
  r.original_label = r.final_label = k0;
  auto total = torch::zeros_like(x);
  for (int64_t i = 0; i < max_iter; ++i) {
    auto probe = x + (1.0 + overshoot) * total;
    {
      torch::NoGradGuard guard;
      r.final_label = f(probe).argmax(1).item<int64_t>();
    }
    if (r.final_label != k0) {
      r.fooled = true;
      break;
    }
    total = total + deepfool_step(f, probe);
    r.iterations = i + 1;
  }
  if (!r.fooled) {
    torch::NoGradGuard guard;
    r.final_label = f(x + (1.0 + overshoot) * total).argmax(1).item<int64_t>();
    r.fooled = r.final_label != k0;
  }
  r.perturbation = (1.0 + overshoot) * total;
  return r;
}

torch::Tensor dct_matrix(int64_t n) {
  auto k = torch::arange(n, torch::kFloat64).unsqueeze(1);
  auto i = torch::arange(n, torch::kFloat64).unsqueeze(0);
  auto d = torch::cos(std::numbers::pi * (2.0 * i + 1.0) * k / (2.0 * static_cast<double>(n)));
  d *= std::sqrt(2.0 / static_cast<double>(n));
  d[0] /= std::sqrt(2.0);
  return d;
}

torch::Tensor dct2(const torch::Tensor& hwc) {
  auto x = hwc.to(torch::kFloat64).permute({2, 0, 1});
  auto dh = dct_matrix(x.size(1)), dw = dct_matrix(x.size(2));
  return torch::matmul(torch::matmul(dh, x), dw.t()).permute({1, 2, 0});
}

torch::Tensor idct2(const torch::Tensor& hwc) {
  auto c = hwc.to(torch::kFloat64).permute({2, 0, 1});
  auto dh = dct_matrix(c.size(1)), dw = dct_matrix(c.size(2));
  return torch::matmul(torch::matmul(dh.t(), c), dw).permute({1, 2, 0});
}

torch::Tensor low_pass_mask(int64_t h, int64_t w, double keep_fraction) {
  if (keep_fraction <= 0.0 || keep_fraction > 1.0) throw ArgumentError("keep_fraction must lie in (0, 1]");
  const auto kh = static_cast<int64_t>(std::ceil(keep_fraction * static_cast<double>(h)));
  const auto kw = static_cast<int64_t>(std::ceil(keep_fraction * static_cast<double>(w)));
  auto m = torch::zeros({h, w, 1}, torch::kFloat64);
  m.slice(0, 0, kh).slice(1, 0, kw).fill_(1.0);
  return m;
}

torch::Tensor low_pass(const torch::Tensor& hwc, double keep_fraction) {
  auto mask = low_pass_mask(hwc.size(0), hwc.size(1), keep_fraction);
  return idct2(dct2(hwc) * mask).to(hwc.scalar_type());
}

nlohmann::json LfConfig::to_json() const {
  return {{"fooling_rate", fooling_rate}, {"overshoot", overshoot}, {"deepfool_iters", deepfool_iters},
          {"term_iters", term_iters},     {"n_samples", n_samples}, {"xi", xi},
          {"keep_fraction", keep_fraction}, {"seed", seed}};
}

LfConfig LfConfig::from_json(const nlohmann::json& j) {
  LfConfig c;
  c.fooling_rate = j.value("fooling_rate", c.fooling_rate);
  c.overshoot = j.value("overshoot", c.overshoot);
  c.deepfool_iters = j.value("deepfool_iters", c.deepfool_iters);
  c.term_iters = j.value("term_iters", c.term_iters);
  c.n_samples = j.value("n_samples", c.n_samples);
  c.xi = j.value("xi", c.xi);
  c.keep_fraction = j.value("keep_fraction", c.keep_fraction);
  c.seed = j.value("seed", c.seed);
  if (c.n_samples < 1 || c.term_iters < 0 || c.deepfool_iters < 1) throw ConfigError("invalid LF iteration counts");
  if (c.keep_fraction <= 0.0 || c.keep_fraction > 1.0) throw ConfigError("keep_fraction must lie in (0, 1]");
  return c;
}

double fooling_rate(Classifier& model, const torch::Tensor& images, const torch::Tensor& trigger) {
  const auto clean = predict_labels(model, images);
  const auto moved = predict_labels(model, apply_additive(images, trigger));
  return moved.ne(clean).to(torch::kFloat64).mean().item<double>();
}

LfTrigger generate_lf_trigger(Classifier& surrogate, const LabeledDataset& pool, const LfConfig& cfg) {
  if (pool.size() < cfg.n_samples)
    throw ArgumentError("LF trigger needs " + std::to_string(cfg.n_samples) + " samples, got " +
                        std::to_string(pool.size()));
  std::vector<int64_t> order(static_cast<size_t>(pool.size()));
  std::iota(order.begin(), order.end(), int64_t{0});
  std::mt19937_64 rng(cfg.seed ^ 0x1f0e11ULL);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(static_cast<size_t>(cfg.n_samples));
  std::sort(order.begin(), order.end());
  auto images = pool.images().index_select(0, torch::tensor(order, torch::kInt64));

  surrogate->eval();
  const auto shape = pool.image_shape();
  auto v = torch::zeros({shape.height, shape.width, shape.channels}, torch::kFloat32);
  LogitFn f = [&](const torch::Tensor& x) { return surrogate->forward(to_nchw(x)); };
  LfTrigger out;
  const auto clean_pred = predict_labels(surrogate, images);
  for (int64_t pass = 0; pass < cfg.term_iters; ++pass) {
    out.fooling_rate = fooling_rate(surrogate, images, v);
    if (out.fooling_rate >= cfg.fooling_rate) {
      out.reached = true;
      break;
    }
    for (int64_t i = 0; i < images.size(0); ++i) {
      auto x = images[i].unsqueeze(0);
      auto moved = apply_additive(x, v);
      int64_t pred = 0;
      {
        torch::NoGradGuard guard;
        pred = f(moved).argmax(1).item<int64_t>();
      }
      if (pred != clean_pred[i].item<int64_t>()) continue;
      auto df = deepfool(f, moved, cfg.overshoot, cfg.deepfool_iters);
      if (!df.fooled) continue;
      v = (v + df.perturbation.squeeze(0)).clamp(-cfg.xi, cfg.xi);
      v = low_pass(v, cfg.keep_fraction);
    }
    out.passes = pass + 1;
  }
  if (!out.reached) {
    out.fooling_rate = fooling_rate(surrogate, images, v);
    out.reached = out.fooling_rate >= cfg.fooling_rate;
    if (!out.reached)
      warn("LF trigger reached fooling rate " + std::to_string(out.fooling_rate) + " < " +
           std::to_string(cfg.fooling_rate) + " after " + std::to_string(cfg.term_iters) + " passes");
  }
  out.trigger = v;
  return out;
}

}  // namespace bdb::attacks
