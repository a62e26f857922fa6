#include "bdb/training.hpp"

#include "bdb/error.hpp"
#include "bdb/hashing.hpp"

#include <cmath>
#include <iostream>
#include <numbers>
#include <numeric>

namespace bdb {

std::string to_string(LrSchedule s) {
  switch (s) {
    case LrSchedule::Cosine: return "cosine";
    case LrSchedule::MultiStep: return "multistep";
    case LrSchedule::Constant: return "constant";
  }
  return "cosine";
}

LrSchedule lr_schedule_from_string(const std::string& s) {
  if (s == "cosine") return LrSchedule::Cosine;
  if (s == "multistep") return LrSchedule::MultiStep;
  if (s == "constant") return LrSchedule::Constant;
  throw ConfigError("unknown lr schedule '" + s + "' (cosine|multistep|constant)");
}

TrainConfig TrainConfig::desk() {
  TrainConfig cfg;
  cfg.epochs = 30;
  return cfg;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lr", lr},
          {"momentum", momentum},
          {"weight_decay", weight_decay},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"lr_schedule", to_string(lr_schedule)},
          {"milestones", milestones},
          {"gamma", gamma},
          {"seed", seed},
          {"device", device}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.lr_schedule = lr_schedule_from_string(j.value("lr_schedule", to_string(c.lr_schedule)));
  c.milestones = j.value("milestones", c.milestones);
  c.gamma = j.value("gamma", c.gamma);
  c.seed = j.value("seed", c.seed);
  c.device = j.value("device", c.device);
  c.verbose = j.value("verbose", c.verbose);
  if (c.batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (c.epochs < 0) throw ConfigError("epochs must be non-negative");
  if (c.device != "cpu") throw ConfigError("device '" + c.device + "' is not available in this build (cpu only)");
  return c;
}

double scheduled_lr(const TrainConfig& cfg, int64_t epoch) {
  switch (cfg.lr_schedule) {
    case LrSchedule::Cosine:
      if (cfg.epochs <= 0) return cfg.lr;
      return 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / cfg.epochs));
    case LrSchedule::MultiStep: {
      double lr = cfg.lr;
      for (auto m : cfg.milestones)
        if (epoch >= m) lr *= cfg.gamma;
      return lr;
    }
    case LrSchedule::Constant: return cfg.lr;
  }
  return cfg.lr;
}

torch::optim::SGD make_sgd(std::vector<torch::Tensor> params, const TrainConfig& cfg) {
  return torch::optim::SGD(std::move(params),
                           torch::optim::SGDOptions(cfg.lr).momentum(cfg.momentum).weight_decay(cfg.weight_decay));
}

void set_lr(torch::optim::Optimizer& opt, double lr) {
  for (auto& group : opt.param_groups()) group.options().set_lr(lr);
}

std::vector<torch::Tensor> make_batches(int64_t n, int64_t batch_size, std::mt19937_64& rng, bool shuffle) {
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), int64_t{0});
  if (shuffle) std::shuffle(order.begin(), order.end(), rng);
  std::vector<torch::Tensor> out;
  for (int64_t start = 0; start < n; start += batch_size) {
    const auto end = std::min(n, start + batch_size);
    out.push_back(torch::tensor(std::vector<int64_t>(order.begin() + start, order.begin() + end), torch::kInt64));
  }
  return out;
}

StepOutput cross_entropy_step(Classifier& model, const Batch& batch) {
  auto logits = model->forward(batch.images);
  return {torch::nn::functional::cross_entropy(logits, batch.labels), logits, batch.labels};
}

std::vector<EpochReport> fit(Classifier& model, const LabeledDataset& data, const TrainConfig& cfg, const StepFn& step,
                             const std::function<void(const EpochReport&)>& on_epoch) {
  if (data.empty()) throw ArgumentError("cannot train on an empty dataset");
  auto opt = make_sgd(model->parameters(), cfg);
  std::mt19937_64 rng(cfg.seed ^ 0x5eed5eedULL);
  std::vector<EpochReport> reports;
  model->train();
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = scheduled_lr(cfg, epoch);
    set_lr(opt, lr);
    double loss_sum = 0.0;
    int64_t seen = 0, correct = 0, tracked = 0;
    for (const auto& idx : make_batches(data.size(), cfg.batch_size, rng)) {
      Batch batch{data.batch_nchw(idx), data.labels().index_select(0, idx), idx, epoch};
      opt.zero_grad();
      auto out = step ? step(model, batch) : cross_entropy_step(model, batch);
      const double loss = out.loss.item<double>();
      if (!std::isfinite(loss))
        throw TrainingFailure("training diverged (non-finite loss) at epoch " + std::to_string(epoch));
      out.loss.backward();
      opt.step();
      loss_sum += loss * static_cast<double>(idx.size(0));
      seen += idx.size(0);
      if (out.logits.defined()) {
        correct += out.logits.argmax(1).eq(out.labels).sum().item<int64_t>();
        tracked += out.labels.size(0);
      }
    }
    EpochReport r{epoch, loss_sum / static_cast<double>(seen),
                  tracked ? 100.0 * static_cast<double>(correct) / static_cast<double>(tracked) : 0.0, lr};
    if (cfg.verbose)
      std::cerr << "epoch " << epoch + 1 << "/" << cfg.epochs << " loss " << r.mean_loss << " acc " << r.accuracy
                << "\n";
    reports.push_back(r);
    if (on_epoch) on_epoch(r);
  }
  model->eval();
  return reports;
}

std::string training_hash(const TrainConfig& cfg, const std::string& dataset, Arch arch, const nlohmann::json& extra) {
  return config_hash({{"train", cfg.to_json()}, {"dataset", dataset}, {"arch", to_string(arch)}, {"extra", extra}});
}

ModelCheckpoint train_classifier(const LabeledDataset& data, Arch arch, const TrainConfig& cfg,
                                 const LabeledDataset* test, const std::string& stage) {
  if (data.empty()) throw ArgumentError("train_classifier: empty dataset");
  torch::manual_seed(cfg.seed);
  auto model = make_classifier({arch, data.n_classes(), data.image_shape()});
  const auto reports = fit(model, data, cfg);
  nlohmann::json meta = {{"epochs", cfg.epochs}, {"train_samples", data.size()}};
  meta["final_train_accuracy"] = accuracy(model, data);
  if (!reports.empty()) meta["final_train_loss"] = reports.back().mean_loss;
  if (test) meta["final_test_accuracy"] = accuracy(model, *test);
  return ModelCheckpoint::capture(model, {{stage, training_hash(cfg, data.name(), arch)}}, cfg.seed, meta);
}

torch::Tensor predict_logits(Classifier& model, const torch::Tensor& images_nhwc, int64_t batch_size) {
  torch::NoGradGuard guard;
  const bool was_training = model->is_training();
  model->eval();
  std::vector<torch::Tensor> parts;
  for (int64_t s = 0; s < images_nhwc.size(0); s += batch_size) {
    const auto e = std::min(images_nhwc.size(0), s + batch_size);
    parts.push_back(model->forward(to_nchw(images_nhwc.slice(0, s, e))));
  }
  if (was_training) model->train();
  if (parts.empty()) return torch::empty({0, model->spec().n_classes});
  return torch::cat(parts);
}

torch::Tensor predict_labels(Classifier& model, const torch::Tensor& images_nhwc, int64_t batch_size) {
  return predict_logits(model, images_nhwc, batch_size).argmax(1);
}

double accuracy(Classifier& model, const LabeledDataset& data) {
  if (data.empty()) throw ArgumentError("accuracy on an empty dataset");
  const auto pred = predict_labels(model, data.images());
  return 100.0 * pred.eq(data.labels()).sum().item<double>() / static_cast<double>(data.size());
}

torch::Tensor forward_features(Classifier& model, const torch::Tensor& images_nhwc, const std::string& layer,
                               int64_t batch_size) {
  if (images_nhwc.dim() != 4) throw ArgumentError("forward_features expects N x H x W x C images");
  const auto& in = model->spec().input;
  if (images_nhwc.size(1) != in.height || images_nhwc.size(2) != in.width || images_nhwc.size(3) != in.channels)
    throw ArgumentError("forward_features: batch shape does not match the model input");
  model->stage_index(layer);  // validates the layer id
  torch::NoGradGuard guard;
  model->eval();
  std::vector<torch::Tensor> parts;
  for (int64_t s = 0; s < images_nhwc.size(0); s += batch_size) {
    const auto e = std::min(images_nhwc.size(0), s + batch_size);
    parts.push_back(model->features(to_nchw(images_nhwc.slice(0, s, e)), layer));
  }
  return torch::cat(parts);
}

torch::Tensor forward_features(const ModelCheckpoint& ckpt, const torch::Tensor& images_nhwc,
                               const std::string& layer) {
  auto model = ckpt.instantiate();
  return forward_features(model, images_nhwc, layer);
}

}  // namespace bdb
