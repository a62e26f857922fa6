#include "bdb/defenses/neural_cleanse.hpp"

#include "bdb/error.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace bdb::defenses {

torch::Tensor ReversedTrigger::apply(const torch::Tensor& images) const {
  auto m = mask.unsqueeze(-1).to(images.dtype());
  return ((1.0 - m) * images + m * pattern.to(images.dtype())).clamp(0.0, 1.0);
}

ReversedTrigger nc_reverse_trigger(Classifier& model, const LabeledDataset& reserve, int64_t target,
                                   const NcConfig& cfg) {
  if (reserve.empty()) throw ArgumentError("trigger reverse-engineering needs a non-empty reserve");
  if (target < 0 || target >= model->spec().n_classes) throw ArgumentError("target class out of range");
  const auto shape = reserve.image_shape();
  torch::manual_seed(cfg.seed + static_cast<uint64_t>(target));
  model->eval();
  for (auto& p : model->parameters()) p.requires_grad_(false);

  auto mask_raw = (torch::rand({shape.height, shape.width}) * 2.0 - 1.0).mul(0.5).requires_grad_(true);
  auto pattern_raw = (torch::rand({shape.height, shape.width, shape.channels}) * 2.0 - 1.0).requires_grad_(true);
  torch::optim::Adam opt({mask_raw, pattern_raw}, torch::optim::AdamOptions(cfg.lr).betas({0.5, 0.9}));
  auto decode_mask = [&] { return (torch::tanh(mask_raw) + 1.0) / 2.0; };
  auto decode_pattern = [&] { return (torch::tanh(pattern_raw) + 1.0) / 2.0; };

  double lambda = cfg.init_lambda;
  int64_t up = 0, down = 0, since_best = 0;
  ReversedTrigger best;
  best.target = target;
  best.l1_norm = std::numeric_limits<double>::infinity();
  ReversedTrigger last;
  std::mt19937_64 rng(cfg.seed ^ (0x4eu + static_cast<uint64_t>(target)));
  const auto y_all = torch::full({cfg.batch_size}, target, torch::kInt64);

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    int64_t hits = 0, seen = 0;
    for (const auto& idx : make_batches(reserve.size(), cfg.batch_size, rng)) {
      auto x = reserve.batch_nchw(idx);
      auto m = decode_mask();
      auto p = decode_pattern().permute({2, 0, 1});
      auto xa = (1.0 - m) * x + m * p;
      auto logits = model->forward(xa);
      auto y = y_all.slice(0, 0, idx.size(0));
      auto loss = torch::nn::functional::cross_entropy(logits, y) + lambda * m.sum();
      opt.zero_grad();
      loss.backward();
      opt.step();
      hits += logits.argmax(1).eq(y).sum().item<int64_t>();
      seen += idx.size(0);
    }
    const double success = static_cast<double>(hits) / static_cast<double>(seen);
    torch::NoGradGuard guard;
    const double l1 = decode_mask().sum().item<double>();
    last = {decode_mask().detach().clone(), decode_pattern().detach().clone(), target, l1, success, false};
    if (success >= cfg.success_threshold && l1 < best.l1_norm) {
      best = last;
      best.converged = true;
      since_best = 0;
    } else if (best.converged) {
      ++since_best;
    }
    if (success >= cfg.success_threshold) {
      ++up;
      down = 0;
    } else {
      ++down;
      up = 0;
    }
    if (up >= cfg.patience) {
      lambda *= cfg.lambda_factor;
      up = 0;
    } else if (down >= cfg.patience) {
      lambda /= cfg.lambda_factor;
      down = 0;
    }
    if (best.converged && since_best >= cfg.early_stop_patience) break;
  }
  for (auto& p : model->parameters()) p.requires_grad_(true);
  if (best.converged) return best;
  warn("reversed trigger for class " + std::to_string(target) + " never reached the success threshold");
  return last;
}

NcDetection nc_detect(const std::vector<double>& l1_norms, double threshold) {
  if (l1_norms.size() < 3) throw ArgumentError("NC anomaly detection needs at least 3 classes");
  auto median_of = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  NcDetection d;
  d.l1_norms = l1_norms;
  d.median = median_of(l1_norms);
  std::vector<double> dev;
  for (double v : l1_norms) dev.push_back(std::abs(v - d.median));
  d.mad = 1.4826 * median_of(dev);
  for (size_t i = 0; i < l1_norms.size(); ++i) {
    if (d.mad > 0.0) {
      d.anomaly_index.push_back(dev[i] / d.mad);
      if (d.anomaly_index.back() > threshold && l1_norms[i] < d.median) d.flagged.push_back(static_cast<int64_t>(i));
    } else {
      d.zero_mad_guard = true;
      d.anomaly_index.push_back(dev[i] == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
      if (l1_norms[i] < d.median / 10.0) d.flagged.push_back(static_cast<int64_t>(i));
    }
  }
  return d;
}

NcDetection nc_detect(const std::vector<ReversedTrigger>& triggers, double threshold) {
  std::vector<double> norms;
  for (const auto& t : triggers) norms.push_back(t.l1_norm);
  return nc_detect(norms, threshold);
}

ModelCheckpoint nc_mitigate(const ModelCheckpoint& model, const std::vector<ReversedTrigger>& triggers,
                            const LabeledDataset& reserve, double unlearning_ratio, const TrainConfig& cfg) {
  if (unlearning_ratio < 0.0 || unlearning_ratio > 1.0) throw ArgumentError("unlearning ratio must lie in [0, 1]");
  auto rng = std::make_shared<std::mt19937_64>(cfg.seed ^ 0x0c1ea5eULL);
  StepFn step = [&](Classifier& net, const Batch& b) {
    const auto n = b.images.size(0);
    const auto k = triggers.empty() ? 0 : static_cast<int64_t>(std::floor(static_cast<double>(n) * unlearning_ratio));
    auto x = b.images;
    if (k > 0) {
      x = x.clone();
      std::uniform_int_distribution<size_t> pick(0, triggers.size() - 1);
      for (int64_t i = 0; i < k; ++i) {
        const auto& t = triggers[pick(*rng)];
        auto img = x[i].permute({1, 2, 0}).unsqueeze(0);
        x[i] = t.apply(img).squeeze(0).permute({2, 0, 1});
      }
    }
    auto logits = net->forward(x);
    return StepOutput{torch::nn::functional::cross_entropy(logits, b.labels), logits, b.labels};
  };
  auto net = fine_tune(model, reserve, cfg, step);
  nlohmann::json params = {{"unlearning_ratio", unlearning_ratio}, {"train", cfg.to_json()}};
  std::vector<int64_t> classes;
  for (const auto& t : triggers) classes.push_back(t.target);
  return model.derive(net, {"nc", stage_hash("nc", params)}, {{"defense", "nc"}, {"unlearned_classes", classes}});
}

NcResult defend_nc(const ModelCheckpoint& model, const LabeledDataset& reserve, const NcConfig& cfg) {
  auto net = model.instantiate();
  NcResult r{{}, {}, model, false};
  for (int64_t c = 0; c < model.spec().n_classes; ++c) r.triggers.push_back(nc_reverse_trigger(net, reserve, c, cfg));
  r.detection = nc_detect(r.triggers, cfg.anomaly_threshold);
  if (r.detection.flagged.empty()) {
    r.model = model.derive(net, {"nc", stage_hash("nc", {{"action", "none"}})},
                           {{"defense", "nc"}, {"nc_action", "none"}});
    return r;
  }
  std::vector<ReversedTrigger> flagged;
  for (auto c : r.detection.flagged) flagged.push_back(r.triggers[static_cast<size_t>(c)]);
  r.model = nc_mitigate(model, flagged, reserve, cfg.unlearning_ratio, cfg.mitigate);
  r.acted = true;
  return r;
}

}  // namespace bdb::defenses
