#include "bdb/defenses/fine_tuning.hpp"

#include "bdb/error.hpp"

namespace bdb::defenses {

std::vector<double> default_nad_betas(size_t taps) {
  const std::vector<double> full{500.0, 1000.0, 1000.0};
  if (taps >= full.size()) return full;
  return {full.end() - static_cast<std::ptrdiff_t>(taps), full.end()};
}

torch::Tensor attention_map(const torch::Tensor& activation, double power) {
  if (activation.dim() != 4) throw ArgumentError("attention_map expects N x C x H x W activations");
  auto a = activation.abs().pow(power).sum(1).flatten(1);
  return torch::nn::functional::normalize(a, torch::nn::functional::NormalizeFuncOptions().p(2).dim(1));
}

ModelCheckpoint defend_nad(const ModelCheckpoint& model, const LabeledDataset& reserve, const NadConfig& cfg) {
  if (reserve.empty()) throw ArgumentError("NAD needs a non-empty clean reserve");
  auto probe = model.instantiate();
  const auto taps = probe->attention_taps();
  const auto betas = cfg.betas.empty() ? default_nad_betas(taps.size()) : cfg.betas;
  if (betas.size() != taps.size())
    throw ConfigError("NAD got " + std::to_string(betas.size()) + " beta weights but " + to_string(model.arch()) +
                      " exposes " + std::to_string(taps.size()) + " attention taps");

  auto teacher_cfg = cfg.train;
  teacher_cfg.epochs = cfg.teacher_epochs;
  auto teacher = fine_tune(model, reserve, teacher_cfg);
  teacher->eval();

  StepFn step = [&](Classifier& student, const Batch& b) {
    auto t_student = student->trace(b.images);
    torch::Tensor loss = torch::nn::functional::cross_entropy(t_student.logits, b.labels);
    ClassifierImpl::Trace t_teacher;
    {
      torch::NoGradGuard guard;
      t_teacher = teacher->trace(b.images);
    }
    for (size_t i = 0; i < taps.size(); ++i) {
      if (betas[i] == 0.0) continue;
      auto as = attention_map(t_student.stages[taps[i]], cfg.power);
      auto at = attention_map(t_teacher.stages[taps[i]], cfg.power);
      loss = loss + betas[i] * (as - at).pow(2).mean();
    }
    return StepOutput{loss, t_student.logits, b.labels};
  };
  auto student = fine_tune(model, reserve, cfg.train, step);
  nlohmann::json params = {{"betas", betas},
                           {"power", cfg.power},
                           {"teacher_epochs", cfg.teacher_epochs},
                           {"train", cfg.train.to_json()}};
  return model.derive(student, {"nad", stage_hash("nad", params)}, {{"defense", "nad"}});
}

}  // namespace bdb::defenses
