#pragma once

#include "bdb/defenses/common.hpp"

namespace bdb::defenses {

struct AnpConfig {
  double eps = 0.4;
  double alpha = 0.2;  // weight of the perturbed loss
  int64_t iters = 2000;
  double threshold = 0.2;
  int64_t inner_steps = 1;
  double mask_lr = 0.2;
  int64_t batch_size = 128;
  uint64_t seed = 0;

  nlohmann::json to_json() const;
};

/// One gate value per channel of every gated normalisation layer, in
/// module order.
struct NeuronMask {
  std::vector<std::string> layers;
  std::vector<torch::Tensor> values;  // per layer, in [0,1]
  double threshold = 0.2;

  int64_t size() const;
  /// Number of gates strictly below `t`.
  int64_t count_below(double t) const;
};

struct AnpResult {
  ModelCheckpoint model;
  NeuronMask mask;
  std::vector<std::pair<std::string, int64_t>> pruned;  // (layer, channel)
};

/// Optimises the gates under adversarial multiplicative perturbation of the
/// normalisation weights, then prunes gates below the threshold. Fresh
/// reserve batches are drawn each iteration.
AnpResult defend_anp(const ModelCheckpoint& model, const LabeledDataset& reserve, const AnpConfig& cfg);

/// Applies a mask by zeroing gates below `threshold`; throws SafetyError if
/// that would prune every gate.
ModelCheckpoint anp_prune(const ModelCheckpoint& model, const NeuronMask& mask, double threshold,
                          std::vector<std::pair<std::string, int64_t>>* pruned = nullptr);

}  // namespace bdb::defenses
