#pragma once

#include "bdb/checkpoint.hpp"
#include "bdb/dataset.hpp"
#include "bdb/models.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace bdb {

enum class LrSchedule { Cosine, MultiStep, Constant };

std::string to_string(LrSchedule s);
LrSchedule lr_schedule_from_string(const std::string& s);

/// Supervised training recipe. Defaults are the CIFAR-scale general
/// settings: SGD, momentum 0.9, weight decay 5e-4, batch 128, cosine
/// annealing over 100 epochs.
struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int64_t batch_size = 128;
  int64_t epochs = 100;
  LrSchedule lr_schedule = LrSchedule::Cosine;
  std::vector<int64_t> milestones;
  double gamma = 0.1;
  uint64_t seed = 0;
  std::string device = "cpu";
  bool verbose = false;

  /// Desk-scale recipe: same optimizer, 30 epochs.
  static TrainConfig desk();

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Learning rate for `epoch` (0-based) under the config's schedule.
double scheduled_lr(const TrainConfig& cfg, int64_t epoch);

torch::optim::SGD make_sgd(std::vector<torch::Tensor> params, const TrainConfig& cfg);
void set_lr(torch::optim::Optimizer& opt, double lr);

/// Index batches for one epoch: a permutation of [0, n) drawn from `rng`
/// (or in order when `shuffle` is false) chopped into `batch_size` pieces.
std::vector<torch::Tensor> make_batches(int64_t n, int64_t batch_size, std::mt19937_64& rng, bool shuffle = true);

struct Batch {
  torch::Tensor images;   // N x C x H x W
  torch::Tensor labels;   // N
  torch::Tensor indices;  // storage indices into the dataset
  int64_t epoch = 0;
};

struct StepOutput {
  torch::Tensor loss;
  torch::Tensor logits;  // optional, enables running accuracy
  torch::Tensor labels;  // labels matching `logits`
};

using StepFn = std::function<StepOutput(Classifier&, const Batch&)>;

struct EpochReport {
  int64_t epoch = 0;
  double mean_loss = 0.0;
  double accuracy = 0.0;  // running training accuracy, percent
  double lr = 0.0;
};

/// Generic SGD loop. `step` computes the loss for one batch (defaults to
/// cross-entropy on the batch as given). Throws TrainingFailure on a
/// non-finite loss, naming the epoch.
std::vector<EpochReport> fit(Classifier& model, const LabeledDataset& data, const TrainConfig& cfg,
                             const StepFn& step = {},
                             const std::function<void(const EpochReport&)>& on_epoch = {});

StepOutput cross_entropy_step(Classifier& model, const Batch& batch);

/// Trains a fresh `arch` classifier; lineage = [(stage, hash of recipe)].
/// Metadata carries the final training accuracy and, when `test` is given,
/// the final test accuracy.
ModelCheckpoint train_classifier(const LabeledDataset& data, Arch arch, const TrainConfig& cfg,
                                 const LabeledDataset* test = nullptr, const std::string& stage = "clean-train");

/// Eval-mode logits for N x H x W x C images.
torch::Tensor predict_logits(Classifier& model, const torch::Tensor& images_nhwc, int64_t batch_size = 500);
torch::Tensor predict_labels(Classifier& model, const torch::Tensor& images_nhwc, int64_t batch_size = 500);
/// Percent of `data` classified as its label.
double accuracy(Classifier& model, const LabeledDataset& data);

/// Activations (batch x feature-dim) at `layer`, inference mode.
torch::Tensor forward_features(const ModelCheckpoint& model, const torch::Tensor& images_nhwc,
                               const std::string& layer);
torch::Tensor forward_features(Classifier& model, const torch::Tensor& images_nhwc, const std::string& layer,
                               int64_t batch_size = 500);

/// Hash of a training recipe together with what it was applied to.
std::string training_hash(const TrainConfig& cfg, const std::string& dataset, Arch arch,
                          const nlohmann::json& extra = nlohmann::json::object());

}  // namespace bdb
