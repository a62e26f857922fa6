#pragma once

#include "bdb/checkpoint.hpp"
#include "bdb/training.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace bdb::defenses {

enum class DefenseKind { None, FT, FP, NAD, NC, ANP, AC, Spectral, ABL, DBD };

std::string to_string(DefenseKind kind);
DefenseKind defense_kind_from_string(const std::string& name);
/// The nine defenses (no "none").
std::vector<DefenseKind> all_defenses();

/// Inputs a defense consumes: a backdoored model plus clean reserve
/// (post-training repair), or the poisoned training set itself.
struct DefenseInputs {
  bool backdoored_model = false;
  bool poisoned_data = false;
  bool clean_reserve = false;
};
DefenseInputs required_inputs(DefenseKind kind);
std::string describe(const DefenseInputs& inputs);

/// Defense-stage recipe: SGD momentum 0.9, weight decay 5e-4, batch 256,
/// cosine annealing.
TrainConfig defense_train_config(int64_t epochs, double lr = 0.01, uint64_t seed = 0);

/// Lineage hash of a defense stage.
std::string stage_hash(const std::string& kind, const nlohmann::json& params);

/// Fine-tunes a copy of `model` on `data` with an optional custom step.
Classifier fine_tune(const ModelCheckpoint& model, const LabeledDataset& data, const TrainConfig& cfg,
                     const StepFn& step = {});

}  // namespace bdb::defenses
