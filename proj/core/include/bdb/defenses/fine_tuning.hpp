#pragma once

#include "bdb/defenses/common.hpp"

namespace bdb::defenses {

/// Plain fine-tuning on the clean reserve.
ModelCheckpoint defend_ft(const ModelCheckpoint& model, const LabeledDataset& reserve, const TrainConfig& cfg);

struct FpConfig {
  double tolerance = 0.10;  // maximum relative drop of reserve accuracy
  TrainConfig finetune = defense_train_config(10);
};

struct FpResult {
  ModelCheckpoint model;
  std::vector<int64_t> pruned_channels;  // in pruning order
  std::vector<double> channel_activation;  // mean reserve activation per channel
  double reserve_accuracy_before = 0.0;
  double reserve_accuracy_pruned = 0.0;
};

/// Prunes last-stage channels in ascending order of mean reserve
/// activation while reserve accuracy stays within `tolerance` of the
/// unpruned model, then fine-tunes with the mask in place.
FpResult defend_fp(const ModelCheckpoint& model, const LabeledDataset& reserve, const FpConfig& cfg);

/// Mean activation of each last-stage channel over `images` (N x H x W x C).
torch::Tensor last_stage_channel_means(Classifier& model, const torch::Tensor& images);

struct NadConfig {
  std::vector<double> betas;  // empty: default_nad_betas(number of taps)
  double power = 2.0;
  int64_t teacher_epochs = 10;
  TrainConfig train = defense_train_config(20);
};

/// (500, 1000, 1000) for three taps; the trailing entries for fewer taps.
std::vector<double> default_nad_betas(size_t taps);

/// Channel-summed |A|^p, flattened and L2-normalised per sample.
torch::Tensor attention_map(const torch::Tensor& activation, double power);

/// Student fine-tuned from the backdoored model with attention
/// distillation from a fine-tuned teacher.
ModelCheckpoint defend_nad(const ModelCheckpoint& model, const LabeledDataset& reserve, const NadConfig& cfg);

}  // namespace bdb::defenses
