#include "bdb/defenses/anp.hpp"

#include "bdb/error.hpp"

#include <random>

namespace bdb::defenses {

nlohmann::json AnpConfig::to_json() const {
  return {{"eps", eps},           {"alpha", alpha},       {"iters", iters},           {"threshold", threshold},
          {"inner_steps", inner_steps}, {"mask_lr", mask_lr}, {"batch_size", batch_size}, {"seed", seed}};
}

int64_t NeuronMask::size() const {
  int64_t n = 0;
  for (const auto& v : values) n += v.numel();
  return n;
}

int64_t NeuronMask::count_below(double t) const {
  int64_t n = 0;
  for (const auto& v : values) n += v.lt(t).sum().item<int64_t>();
  return n;
}

namespace {

std::vector<std::string> gated_norm_names(Classifier& net) {
  std::vector<std::string> names;
  for (const auto& item : net->named_modules("", false))
    if (std::dynamic_pointer_cast<GatedBatchNorm2dImpl>(item.value())) names.push_back(item.key());
  return names;
}

}  // namespace

AnpResult defend_anp(const ModelCheckpoint& model, const LabeledDataset& reserve, const AnpConfig& cfg) {
  if (reserve.empty()) throw ArgumentError("ANP needs a non-empty clean reserve");
  if (cfg.eps < 0.0 || cfg.alpha < 0.0 || cfg.alpha > 1.0) throw ConfigError("ANP eps must be >= 0 and alpha in [0,1]");
  torch::manual_seed(cfg.seed);
  auto net = model.instantiate();
  auto norms = net->gated_norms();
  if (norms.empty()) throw ConfigError(to_string(model.arch()) + " has no gated normalisation layers");
  for (auto& p : net->parameters()) p.requires_grad_(false);

  std::vector<torch::Tensor> masks, wnoise, bnoise;
  for (auto& n : norms) {
    masks.push_back(torch::ones({n->channels()}).requires_grad_(true));
    wnoise.push_back(torch::zeros({n->channels()}).requires_grad_(true));
    bnoise.push_back(torch::zeros({n->channels()}).requires_grad_(true));
  }
  std::vector<torch::Tensor> noise_params = wnoise;
  noise_params.insert(noise_params.end(), bnoise.begin(), bnoise.end());
  torch::optim::SGD mask_opt(masks, torch::optim::SGDOptions(cfg.mask_lr).momentum(0.9));
  const double noise_lr = cfg.inner_steps > 0 ? cfg.eps / static_cast<double>(cfg.inner_steps) : 0.0;
  torch::optim::SGD noise_opt(noise_params, torch::optim::SGDOptions(std::max(noise_lr, 1e-12)));

  auto begin = [&](bool perturb) {
    for (size_t i = 0; i < norms.size(); ++i) norms[i]->begin_perturbation({masks[i], wnoise[i], bnoise[i], perturb});
  };
  auto end = [&] {
    for (auto& n : norms) n->end_perturbation();
  };

  std::mt19937_64 rng(cfg.seed ^ 0xa9bULL);
  std::vector<torch::Tensor> batches;
  size_t cursor = 0;
  net->train();
  for (int64_t it = 0; it < cfg.iters; ++it) {
    if (cursor >= batches.size()) {
      batches = make_batches(reserve.size(), cfg.batch_size, rng);
      cursor = 0;
    }
    const auto& idx = batches[cursor++];
    auto x = reserve.batch_nchw(idx);
    auto y = reserve.labels().index_select(0, idx);

    if (cfg.eps > 0.0) {
      {
        torch::NoGradGuard guard;
        for (auto& t : noise_params) t.uniform_(-cfg.eps, cfg.eps);
      }
      for (int64_t s = 0; s < cfg.inner_steps; ++s) {
        begin(true);
        auto loss = -torch::nn::functional::cross_entropy(net->forward(x), y);
        end();
        noise_opt.zero_grad();
        loss.backward();
        noise_opt.step();
        torch::NoGradGuard guard;
        for (auto& t : noise_params) t.clamp_(-cfg.eps, cfg.eps);
      }
    }
    begin(cfg.eps > 0.0);
    auto loss_perturbed = torch::nn::functional::cross_entropy(net->forward(x), y);
    end();
    begin(false);
    auto loss_clean = torch::nn::functional::cross_entropy(net->forward(x), y);
    end();
    auto loss = cfg.alpha * loss_perturbed + (1.0 - cfg.alpha) * loss_clean;
    mask_opt.zero_grad();
    loss.backward();
    mask_opt.step();
    torch::NoGradGuard guard;
    for (auto& m : masks) m.clamp_(0.0, 1.0);
  }

  NeuronMask mask;
  mask.layers = gated_norm_names(net);
  for (auto& m : masks) mask.values.push_back(m.detach().clone());
  mask.threshold = cfg.threshold;
  AnpResult r{model, mask, {}};
  r.model = anp_prune(model, mask, cfg.threshold, &r.pruned);
  return r;
}

ModelCheckpoint anp_prune(const ModelCheckpoint& model, const NeuronMask& mask, double threshold,
                          std::vector<std::pair<std::string, int64_t>>* pruned) {
  auto net = model.instantiate();
  auto norms = net->gated_norms();
  if (norms.size() != mask.values.size()) throw ArgumentError("neuron mask does not match the model");
  if (mask.count_below(threshold) >= mask.size())
    throw SafetyError("ANP would prune all " + std::to_string(mask.size()) + " neurons; refusing to return a dead model");
  std::vector<int64_t> pruned_flat;
  for (size_t i = 0; i < norms.size(); ++i) {
    auto keep = mask.values[i].ge(threshold).to(torch::kFloat32);
    norms[i]->set_gate(norms[i]->gate() * keep);
    auto off = keep.eq(0).nonzero().flatten();
    for (int64_t k = 0; k < off.size(0); ++k) {
      const auto ch = off[k].item<int64_t>();
      if (pruned) pruned->emplace_back(i < mask.layers.size() ? mask.layers[i] : std::to_string(i), ch);
      pruned_flat.push_back(static_cast<int64_t>(i) * 100000 + ch);
    }
  }
  nlohmann::json params = {{"threshold", threshold}, {"pruned", pruned_flat}};
  return model.derive(net, {"anp", stage_hash("anp", params)},
                      {{"defense", "anp"}, {"anp_pruned_count", static_cast<int64_t>(pruned_flat.size())}});
}

}  // namespace bdb::defenses
