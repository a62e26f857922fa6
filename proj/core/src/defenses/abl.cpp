#include "bdb/defenses/common.hpp"
#include "bdb/defenses/in_training.hpp"

#include "bdb/error.hpp"

#include <algorithm>
#include <numeric>

namespace bdb::defenses {

torch::Tensor flooding_loss(const torch::Tensor& loss, double b) { return (loss - b).abs() + b; }

nlohmann::json AblConfig::to_json() const {
  return {{"tuning_epochs", tuning_epochs}, {"flooding", flooding}, {"iso_ratio", iso_ratio},
          {"finetune_epochs", finetune_epochs}, {"unlearn_epochs", unlearn_epochs}, {"unlearn_lr", unlearn_lr},
          {"unlearn_batch", unlearn_batch}, {"train", train.to_json()}};
}

AblConfig AblConfig::from_json(const nlohmann::json& j) {
  AblConfig c;
  c.tuning_epochs = j.value("tuning_epochs", c.tuning_epochs);
  c.flooding = j.value("flooding", c.flooding);
  c.iso_ratio = j.value("iso_ratio", c.iso_ratio);
  c.finetune_epochs = j.value("finetune_epochs", c.finetune_epochs);
  c.unlearn_epochs = j.value("unlearn_epochs", c.unlearn_epochs);
  c.unlearn_lr = j.value("unlearn_lr", c.unlearn_lr);
  c.unlearn_batch = j.value("unlearn_batch", c.unlearn_batch);
  if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
  if (c.iso_ratio <= 0.0 || c.iso_ratio >= 1.0) throw ConfigError("iso_ratio must lie in (0, 1)");
  if (c.flooding < 0.0) throw ConfigError("flooding level must be non-negative");
  return c;
}

namespace {

torch::Tensor per_sample_loss(Classifier& model, const LabeledDataset& data) {
  auto logits = predict_logits(model, data.images());
  return torch::nn::functional::cross_entropy(
      logits, data.labels(), torch::nn::functional::CrossEntropyFuncOptions().reduction(torch::kNone));
}

}  // namespace

AblIsolation abl_isolate(const LabeledDataset& data, Arch arch, const AblConfig& cfg) {
  if (data.empty()) throw ArgumentError("abl_isolate: empty dataset");
  auto tcfg = cfg.train;
  tcfg.epochs = cfg.tuning_epochs;
  tcfg.lr_schedule = LrSchedule::Constant;
  torch::manual_seed(tcfg.seed);
  auto model = make_classifier({arch, data.n_classes(), data.image_shape()});
  const double b = cfg.flooding;
  fit(model, data, tcfg, [b](Classifier& m, const Batch& batch) -> StepOutput {
    auto logits = m->forward(batch.images);
    return {flooding_loss(torch::nn::functional::cross_entropy(logits, batch.labels), b), logits, batch.labels};
  });

  auto losses = per_sample_loss(model, data).contiguous();
  const auto* l = losses.data_ptr<float>();
  const auto ids = data.id_vector();
  std::vector<int64_t> order(ids.size());
  std::iota(order.begin(), order.end(), int64_t{0});
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t c) {
    return l[a] != l[c] ? l[a] < l[c] : ids[static_cast<size_t>(a)] < ids[static_cast<size_t>(c)];
  });
  const auto k = static_cast<int64_t>(std::floor(cfg.iso_ratio * static_cast<double>(data.size()) + 1e-9));

  AblIsolation out{{}, ModelCheckpoint::capture(model, {{"abl-isolate", stage_hash("abl-isolate", cfg.to_json())}},
                                                tcfg.seed, {{"defense", "abl"}})};
  out.report.method = "abl";
  out.report.params = cfg.to_json();
  out.report.n_total = data.size();
  for (size_t i = 0; i < ids.size(); ++i) out.report.scores[ids[i]] = -static_cast<double>(l[i]);
  for (int64_t i = 0; i < k; ++i) out.report.suspected_ids.push_back(ids[static_cast<size_t>(order[static_cast<size_t>(i)])]);
  std::sort(out.report.suspected_ids.begin(), out.report.suspected_ids.end());
  return out;
}

ModelCheckpoint abl_unlearn(const ModelCheckpoint& warm, const LabeledDataset& data,
                            const std::vector<int64_t>& suspected, const AblConfig& cfg) {
  auto rest = data.without_ids({suspected.begin(), suspected.end()});
  if (rest.empty()) throw ArgumentError("abl_unlearn: every sample is suspected");
  auto tcfg = cfg.train;
  tcfg.epochs = cfg.finetune_epochs;
  auto model = fine_tune(warm, rest, tcfg);

  nlohmann::json meta = {{"defense", "abl"}, {"isolated", suspected.size()}};
  if (suspected.empty()) {
    warn("ABL isolated no samples; unlearning skipped");
    meta["unlearning"] = "skipped";
  } else if (cfg.unlearn_epochs > 0) {
    std::vector<int64_t> idx;
    for (auto id : suspected)
      if (auto i = data.index_of(id)) idx.push_back(*i);
    auto isolated = data.select(idx);
    TrainConfig ucfg = tcfg;
    ucfg.epochs = cfg.unlearn_epochs;
    ucfg.lr = cfg.unlearn_lr;
    ucfg.batch_size = cfg.unlearn_batch;
    ucfg.lr_schedule = LrSchedule::Constant;
    fit(model, isolated, ucfg, [](Classifier& m, const Batch& batch) -> StepOutput {
      auto logits = m->forward(batch.images);
      return {-torch::nn::functional::cross_entropy(logits, batch.labels), logits, batch.labels};
    });
    meta["unlearning"] = "gradient-ascent";
  }
  return warm.derive(model, {"abl", stage_hash("abl", cfg.to_json())}, meta);
}

}  // namespace bdb::defenses
