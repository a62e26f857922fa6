#include "bdb/attacks/label_consistent.hpp"

#include "bdb/error.hpp"

namespace bdb::attacks {

torch::Tensor pgd_untargeted(Classifier& model, const torch::Tensor& images, const torch::Tensor& labels,
                             const PgdConfig& cfg, int64_t batch_size) {
  if (images.dim() != 4) throw ArgumentError("pgd_untargeted expects N x H x W x C images");
  model->eval();
  std::vector<torch::Tensor> parts;
  for (int64_t s = 0; s < images.size(0); s += batch_size) {
    const auto e = std::min(images.size(0), s + batch_size);
    auto x0 = to_nchw(images.slice(0, s, e)).detach();
    auto y = labels.slice(0, s, e);
    auto x = x0.clone();
    for (int64_t step = 0; step < cfg.steps && cfg.eps > 0.0; ++step) {
      x.requires_grad_(true);
      auto loss = torch::nn::functional::cross_entropy(model->forward(x), y);
      auto grad = torch::autograd::grad({loss}, {x})[0];
      torch::NoGradGuard guard;
      x = x.detach() + cfg.step_size * grad.sign();
      x = torch::min(torch::max(x, x0 - cfg.eps), x0 + cfg.eps).clamp(0.0, 1.0);
    }
    parts.push_back(to_nhwc(x.detach()));
  }
  if (parts.empty()) return images.clone();
  return torch::cat(parts);
}

torch::Tensor craft_lc_samples(Classifier& surrogate, const torch::Tensor& images, const torch::Tensor& labels,
                               const PgdConfig& cfg, int64_t patch, float value) {
  return apply_badnets(pgd_untargeted(surrogate, images, labels, cfg), patch, value);
}

}  // namespace bdb::attacks
