#pragma once

#include "bdb/checkpoint.hpp"
#include "bdb/dataset.hpp"
#include "bdb/defenses/suspicion.hpp"
#include "bdb/training.hpp"

#include <json.hpp>
#include <torch/torch.h>

namespace bdb::defenses {

/// |L - b| + b: equals L above the flood level b, reflects it below.
torch::Tensor flooding_loss(const torch::Tensor& loss, double b);

struct AblConfig {
  int64_t tuning_epochs = 20;
  double flooding = 0.5;
  double iso_ratio = 0.01;
  int64_t finetune_epochs = 60;
  int64_t unlearn_epochs = 20;
  double unlearn_lr = 5e-4;
  int64_t unlearn_batch = 64;
  TrainConfig train;  // lr, batch, momentum for isolation and fine-tuning

  nlohmann::json to_json() const;
  static AblConfig from_json(const nlohmann::json& j);
};

struct AblIsolation {
  SuspicionReport report;  // scores are negated losses: higher = more suspicious
  ModelCheckpoint warm;
};

/// Trains a fresh model under the flooding loss, then isolates the
/// floor(iso_ratio * N) lowest-loss samples.
AblIsolation abl_isolate(const LabeledDataset& poisoned_train, Arch arch, const AblConfig& cfg);

/// Fine-tunes the warm model on the data minus `suspected`, then runs
/// gradient ascent on the suspected samples.
ModelCheckpoint abl_unlearn(const ModelCheckpoint& warm, const LabeledDataset& poisoned_train,
                            const std::vector<int64_t>& suspected, const AblConfig& cfg);

struct DbdConfig {
  int64_t ssl_epochs = 100;
  int64_t warmup_epochs = 10;
  double keep_fraction = 0.5;
  int64_t ssl_batch = 512;
  int64_t semi_batch = 128;
  int64_t semi_epochs = 20;
  double temperature = 0.5;
  int64_t projection_dim = 128;
  double ssl_lr = 1e-3;
  double warmup_lr = 0.01;
  double semi_lr = 0.01;
  double confidence = 0.95;
  uint64_t seed = 0;

  nlohmann::json to_json() const;
  static DbdConfig from_json(const nlohmann::json& j);
};

/// Normalized-temperature cross entropy over 2B embeddings where rows i
/// and i + B are the two views of one image.
torch::Tensor nt_xent(const torch::Tensor& z1, const torch::Tensor& z2, double temperature);

/// Random crop (pad 4), horizontal flip, brightness/contrast jitter, and
/// occasional greyscale on an N x C x H x W batch.
torch::Tensor simclr_augment(const torch::Tensor& nchw, torch::Generator& gen);

struct DbdResult {
  ModelCheckpoint model;
  SuspicionReport report;                 // the samples whose labels were stripped
  std::map<int64_t, double> warmup_loss;  // per-sample loss after the warmup stage
};

DbdResult dbd_pipeline(const LabeledDataset& poisoned_train, Arch arch, const DbdConfig& cfg);

}  // namespace bdb::defenses
