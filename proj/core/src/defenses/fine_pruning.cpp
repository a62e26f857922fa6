#include "bdb/defenses/fine_tuning.hpp"

#include "bdb/error.hpp"

#include <numeric>

namespace bdb::defenses {

torch::Tensor last_stage_channel_means(Classifier& model, const torch::Tensor& images) {
  torch::NoGradGuard guard;
  model->eval();
  auto sum = torch::zeros({model->last_stage_channels()}, torch::kFloat64);
  for (int64_t s = 0; s < images.size(0); s += 500) {
    const auto e = std::min(images.size(0), s + 500);
    sum += model->last_stage(to_nchw(images.slice(0, s, e))).mean({2, 3}).sum(0).to(torch::kFloat64);
  }
  return sum / static_cast<double>(images.size(0));
}

namespace {

double masked_accuracy(Classifier& model, const std::vector<torch::Tensor>& cached, const torch::Tensor& labels,
                       const torch::Tensor& mask) {
  torch::NoGradGuard guard;
  model->set_channel_mask(mask);
  int64_t correct = 0, offset = 0;
  for (const auto& h : cached) {
    auto pred = model->logits_from_last_stage(h).argmax(1);
    correct += pred.eq(labels.slice(0, offset, offset + h.size(0))).sum().item<int64_t>();
    offset += h.size(0);
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size(0));
}

}  // namespace

FpResult defend_fp(const ModelCheckpoint& model, const LabeledDataset& reserve, const FpConfig& cfg) {
  if (cfg.tolerance < 0.0) throw ArgumentError("fine-pruning tolerance must be non-negative");
  if (reserve.empty()) throw ArgumentError("fine-pruning needs a non-empty clean reserve");
  auto net = model.instantiate();
  const auto channels = net->last_stage_channels();
  auto means = last_stage_channel_means(net, reserve.images());
  std::vector<int64_t> order(static_cast<size_t>(channels));
  std::iota(order.begin(), order.end(), int64_t{0});
  const auto* m = means.data_ptr<double>();
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) { return m[a] < m[b]; });

  std::vector<torch::Tensor> cached;
  {
    torch::NoGradGuard guard;
    for (int64_t s = 0; s < reserve.size(); s += 500) {
      const auto e = std::min(reserve.size(), s + 500);
      cached.push_back(net->last_stage(to_nchw(reserve.images().slice(0, s, e))));
    }
  }
  auto mask = net->channel_mask().clone();
  const double base = masked_accuracy(net, cached, reserve.labels(), mask);
  const double floor = base * (1.0 - cfg.tolerance);
  FpResult out{model, {}, std::vector<double>(m, m + channels), base, base};
  for (int64_t k = 0; k + 1 < channels; ++k) {
    auto trial = mask.clone();
    trial[order[static_cast<size_t>(k)]] = 0.0;
    const double acc = masked_accuracy(net, cached, reserve.labels(), trial);
    if (acc < floor) break;
    mask = trial;
    out.pruned_channels.push_back(order[static_cast<size_t>(k)]);
    out.reserve_accuracy_pruned = acc;
  }
  net->set_channel_mask(mask);

  auto pruned = model.derive(net, {"fp-prune", ""});
  auto tuned = fine_tune(pruned, reserve, cfg.finetune);
  tuned->set_channel_mask(mask);
  nlohmann::json params = {{"tolerance", cfg.tolerance}, {"finetune", cfg.finetune.to_json()}};
  out.model = model.derive(tuned, {"fp", stage_hash("fp", params)},
                           {{"defense", "fp"}, {"pruned_channels", out.pruned_channels}});
  return out;
}

}  // namespace bdb::defenses
