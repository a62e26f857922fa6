#pragma once

#include "bdb/defenses/common.hpp"

#include <optional>

namespace bdb::defenses {

struct ReversedTrigger {
  torch::Tensor mask;     // H x W in [0,1]
  torch::Tensor pattern;  // H x W x C in [0,1]
  int64_t target = 0;
  double l1_norm = 0.0;
  double attack_success = 0.0;  // on the reserve, fraction
  bool converged = false;

  /// (1 - mask) * x + mask * pattern on N x H x W x C images.
  torch::Tensor apply(const torch::Tensor& images) const;
};

struct NcConfig {
  int64_t epochs = 80;
  int64_t batch_size = 128;
  double lr = 0.1;
  double init_lambda = 1e-3;
  double lambda_factor = 1.5;
  double success_threshold = 0.99;
  int64_t patience = 5;             // epochs before lambda moves
  int64_t early_stop_patience = 25;  // epochs without a better feasible norm
  double anomaly_threshold = 2.0;
  double unlearning_ratio = 0.2;
  TrainConfig mitigate = defense_train_config(10);
  uint64_t seed = 0;
};

/// Minimises CE(model((1-m) x + m p), target) + lambda * |m|_1 over the
/// reserve, with lambda raised while the reversed trigger succeeds and
/// lowered while it does not.
ReversedTrigger nc_reverse_trigger(Classifier& model, const LabeledDataset& reserve, int64_t target,
                                   const NcConfig& cfg);

struct NcDetection {
  std::vector<double> l1_norms;
  std::vector<double> anomaly_index;
  std::vector<int64_t> flagged;
  double median = 0.0;
  double mad = 0.0;  // already scaled by 1.4826
  bool zero_mad_guard = false;
};

/// Anomaly index |l1 - median| / (1.4826 MAD); flags classes above the
/// threshold whose norm is below the median. With MAD = 0 it flags classes
/// below median / 10 instead.
NcDetection nc_detect(const std::vector<double>& l1_norms, double threshold = 2.0);
NcDetection nc_detect(const std::vector<ReversedTrigger>& triggers, double threshold = 2.0);

/// Fine-tunes on the reserve with `unlearning_ratio` of every batch carrying
/// one of the reversed triggers and its true label.
ModelCheckpoint nc_mitigate(const ModelCheckpoint& model, const std::vector<ReversedTrigger>& triggers,
                            const LabeledDataset& reserve, double unlearning_ratio, const TrainConfig& cfg);

struct NcResult {
  std::vector<ReversedTrigger> triggers;
  NcDetection detection;
  ModelCheckpoint model;  // unchanged weights when nothing was flagged
  bool acted = false;
};

NcResult defend_nc(const ModelCheckpoint& model, const LabeledDataset& reserve, const NcConfig& cfg);

}  // namespace bdb::defenses
