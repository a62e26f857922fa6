#include "bdb/defenses/common.hpp"

#include "bdb/error.hpp"
#include "bdb/hashing.hpp"

namespace bdb::defenses {

std::string to_string(DefenseKind kind) {
  switch (kind) {
    case DefenseKind::None: return "none";
    case DefenseKind::FT: return "ft";
    case DefenseKind::FP: return "fp";
    case DefenseKind::NAD: return "nad";
    case DefenseKind::NC: return "nc";
    case DefenseKind::ANP: return "anp";
    case DefenseKind::AC: return "ac";
    case DefenseKind::Spectral: return "spectral";
    case DefenseKind::ABL: return "abl";
    case DefenseKind::DBD: return "dbd";
  }
  return "none";
}

DefenseKind defense_kind_from_string(const std::string& name) {
  if (name == "none") return DefenseKind::None;
  for (auto k : all_defenses())
    if (to_string(k) == name) return k;
  throw ConfigError("unknown defense '" + name + "' (none|ft|fp|nad|nc|anp|ac|spectral|abl|dbd)");
}

std::vector<DefenseKind> all_defenses() {
  return {DefenseKind::FT, DefenseKind::FP,       DefenseKind::NAD, DefenseKind::NC, DefenseKind::ANP,
          DefenseKind::AC, DefenseKind::Spectral, DefenseKind::ABL, DefenseKind::DBD};
}

DefenseInputs required_inputs(DefenseKind kind) {
  switch (kind) {
    case DefenseKind::FT:
    case DefenseKind::FP:
    case DefenseKind::NAD:
    case DefenseKind::NC:
    case DefenseKind::ANP: return {true, false, true};
    case DefenseKind::AC:
    case DefenseKind::Spectral: return {true, true, false};
    case DefenseKind::ABL:
    case DefenseKind::DBD: return {false, true, false};
    case DefenseKind::None: return {true, false, false};
  }
  return {};
}

std::string describe(const DefenseInputs& inputs) {
  std::string s;
  auto add = [&](bool on, const char* what) {
    if (!on) return;
    if (!s.empty()) s += " + ";
    s += what;
  };
  add(inputs.backdoored_model, "backdoored checkpoint");
  add(inputs.poisoned_data, "poisoned training set");
  add(inputs.clean_reserve, "clean reserve");
  return s.empty() ? "nothing" : s;
}

TrainConfig defense_train_config(int64_t epochs, double lr, uint64_t seed) {
  TrainConfig c;
  c.epochs = epochs;
  c.lr = lr;
  c.batch_size = 256;
  c.seed = seed;
  return c;
}

std::string stage_hash(const std::string& kind, const nlohmann::json& params) {
  return config_hash({{"defense", kind}, {"params", params}});
}

Classifier fine_tune(const ModelCheckpoint& model, const LabeledDataset& data, const TrainConfig& cfg,
                     const StepFn& step) {
  if (data.empty()) throw ArgumentError("fine-tuning needs a non-empty clean reserve");
  torch::manual_seed(cfg.seed);
  auto net = model.instantiate();
  fit(net, data, cfg, step);
  return net;
}

}  // namespace bdb::defenses
