#include "bdb/defenses/common.hpp"
#include "bdb/defenses/in_training.hpp"

#include "bdb/error.hpp"

#include <algorithm>
#include <numeric>

namespace bdb::defenses {

namespace F = torch::nn::functional;

nlohmann::json DbdConfig::to_json() const {
  return {{"ssl_epochs", ssl_epochs}, {"warmup_epochs", warmup_epochs}, {"keep_fraction", keep_fraction},
          {"ssl_batch", ssl_batch}, {"semi_batch", semi_batch}, {"semi_epochs", semi_epochs},
          {"temperature", temperature}, {"projection_dim", projection_dim}, {"ssl_lr", ssl_lr},
          {"warmup_lr", warmup_lr}, {"semi_lr", semi_lr}, {"confidence", confidence}, {"seed", seed}};
}

DbdConfig DbdConfig::from_json(const nlohmann::json& j) {
  DbdConfig c;
  c.ssl_epochs = j.value("ssl_epochs", c.ssl_epochs);
  c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
  c.keep_fraction = j.value("keep_fraction", c.keep_fraction);
  c.ssl_batch = j.value("ssl_batch", c.ssl_batch);
  c.semi_batch = j.value("semi_batch", c.semi_batch);
  c.semi_epochs = j.value("semi_epochs", c.semi_epochs);
  c.temperature = j.value("temperature", c.temperature);
  c.projection_dim = j.value("projection_dim", c.projection_dim);
  c.ssl_lr = j.value("ssl_lr", c.ssl_lr);
  c.warmup_lr = j.value("warmup_lr", c.warmup_lr);
  c.semi_lr = j.value("semi_lr", c.semi_lr);
  c.confidence = j.value("confidence", c.confidence);
  c.seed = j.value("seed", c.seed);
  if (c.keep_fraction <= 0.0 || c.keep_fraction > 1.0) throw ConfigError("keep_fraction must lie in (0, 1]");
  if (c.temperature <= 0.0) throw ConfigError("temperature must be positive");
  if (c.ssl_batch < 2 || c.semi_batch < 1) throw ConfigError("DBD batch sizes are too small");
  return c;
}

torch::Tensor nt_xent(const torch::Tensor& z1, const torch::Tensor& z2, double temperature) {
  const auto b = z1.size(0);
  auto z = F::normalize(torch::cat({z1, z2}), F::NormalizeFuncOptions().dim(1));
  auto sim = torch::matmul(z, z.t()) / temperature;
  sim = sim.masked_fill(torch::eye(2 * b, torch::kBool), -1e9);
  auto targets = torch::cat({torch::arange(b, 2 * b), torch::arange(0, b)});
  return F::cross_entropy(sim, targets);
}

torch::Tensor simclr_augment(const torch::Tensor& x, torch::Generator& gen) {
  const auto n = x.size(0), h = x.size(2), w = x.size(3);
  auto padded = F::pad(x, F::PadFuncOptions({4, 4, 4, 4}).mode(torch::kReflect));
  auto offs = torch::randint(0, 9, {n, 2}, gen, torch::kInt64);
  auto flips = torch::rand({n}, gen) < 0.5;
  auto grey = torch::rand({n}, gen) < 0.2;
  auto bright = torch::rand({n, 1, 1, 1}, gen) * 0.8 + 0.6;
  auto contrast = torch::rand({n, 1, 1, 1}, gen) * 0.8 + 0.6;
  std::vector<torch::Tensor> crops;
  crops.reserve(static_cast<size_t>(n));
  const auto* o = offs.data_ptr<int64_t>();
  const auto* f = flips.data_ptr<bool>();
  for (int64_t i = 0; i < n; ++i) {
    auto c = padded[i].slice(1, o[2 * i], o[2 * i] + h).slice(2, o[2 * i + 1], o[2 * i + 1] + w);
    crops.push_back(f[i] ? c.flip({2}) : c);
  }
  auto out = torch::stack(crops) * bright;
  auto mean = out.mean({1, 2, 3}, true);
  out = (out - mean) * contrast + mean;
  if (x.size(1) == 3) {
    auto g = (out * torch::tensor({0.299f, 0.587f, 0.114f}).view({1, 3, 1, 1})).sum(1, true).expand_as(out);
    out = torch::where(grey.view({n, 1, 1, 1}), g, out);
  }
  return out.clamp(0.0, 1.0);
}

namespace {

torch::Tensor backbone(Classifier& model, const torch::Tensor& nchw) { return model->trace(nchw).penultimate; }

torch::Tensor backbone_features(Classifier& model, const LabeledDataset& data) {
  torch::NoGradGuard guard;
  model->eval();
  std::vector<torch::Tensor> parts;
  for (int64_t s = 0; s < data.size(); s += 500) {
    auto idx = torch::arange(s, std::min(data.size(), s + 500));
    parts.push_back(backbone(model, data.batch_nchw(idx)));
  }
  return torch::cat(parts);
}

}  // namespace

DbdResult dbd_pipeline(const LabeledDataset& data, Arch arch, const DbdConfig& cfg) {
  if (data.empty()) throw ArgumentError("dbd_pipeline: empty dataset");
  torch::manual_seed(cfg.seed);
  auto gen = torch::make_generator<torch::CPUGeneratorImpl>(cfg.seed ^ 0xdbdULL);
  std::mt19937_64 rng(cfg.seed ^ 0xdbd0dbd0ULL);
  auto model = make_classifier({arch, data.n_classes(), data.image_shape()});

  // Stage 1: contrastive pretraining of the backbone, labels unused.
  torch::nn::Sequential projector(torch::nn::Linear(model->feature_dim(), 512), torch::nn::ReLU(),
                                  torch::nn::Linear(512, cfg.projection_dim));
  {
    std::vector<torch::Tensor> params;
    for (auto& p : model->parameters()) params.push_back(p);
    for (auto& p : projector->parameters()) params.push_back(p);
    torch::optim::Adam opt(params, torch::optim::AdamOptions(cfg.ssl_lr).weight_decay(1e-6));
    model->train();
    projector->train();
    for (int64_t epoch = 0; epoch < cfg.ssl_epochs; ++epoch) {
      for (const auto& idx : make_batches(data.size(), cfg.ssl_batch, rng)) {
        if (idx.size(0) < 2) continue;
        auto x = data.batch_nchw(idx);
        auto z1 = projector->forward(backbone(model, simclr_augment(x, gen)));
        auto z2 = projector->forward(backbone(model, simclr_augment(x, gen)));
        auto loss = nt_xent(z1, z2, cfg.temperature);
        if (!std::isfinite(loss.item<double>()))
          throw TrainingFailure("contrastive stage diverged at epoch " + std::to_string(epoch));
        opt.zero_grad();
        loss.backward();
        opt.step();
      }
    }
  }
  auto feats = backbone_features(model, data);
  const double spread = feats.var(0).mean().item<double>();
  if (spread < 1e-6)
    throw TrainingFailure("contrastive stage collapsed (embedding variance " + std::to_string(spread) + ")");

  // Stage 2: linear warmup on frozen features with per-sample loss tracking.
  auto head = model->head();
  {
    auto opt = torch::optim::SGD(head->parameters(), torch::optim::SGDOptions(cfg.warmup_lr).momentum(0.9));
    for (int64_t epoch = 0; epoch < cfg.warmup_epochs; ++epoch)
      for (const auto& idx : make_batches(data.size(), cfg.semi_batch, rng)) {
        auto loss = F::cross_entropy(head(feats.index_select(0, idx)), data.labels().index_select(0, idx));
        opt.zero_grad();
        loss.backward();
        opt.step();
      }
  }
  torch::Tensor losses;
  {
    torch::NoGradGuard guard;
    losses = F::cross_entropy(head(feats), data.labels(), F::CrossEntropyFuncOptions().reduction(torch::kNone));
  }
  losses = losses.contiguous();

  // Stage 3: keep the lowest-loss fraction labeled.
  const auto ids = data.id_vector();
  const auto* l = losses.data_ptr<float>();
  std::vector<int64_t> order(ids.size());
  std::iota(order.begin(), order.end(), int64_t{0});
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    return l[a] != l[b] ? l[a] < l[b] : ids[static_cast<size_t>(a)] < ids[static_cast<size_t>(b)];
  });
  const auto keep = static_cast<int64_t>(std::floor(cfg.keep_fraction * static_cast<double>(data.size()) + 1e-9));
  std::vector<int64_t> kept(order.begin(), order.begin() + keep), stripped(order.begin() + keep, order.end());

  DbdResult out{ModelCheckpoint::capture(model, {{"dbd", "pending"}}, cfg.seed), {}, {}};
  out.report.method = "dbd";
  out.report.params = cfg.to_json();
  out.report.n_total = data.size();
  for (size_t i = 0; i < ids.size(); ++i) {
    out.warmup_loss[ids[i]] = l[i];
    out.report.scores[ids[i]] = l[i];
  }
  for (auto i : stripped) out.report.suspected_ids.push_back(ids[static_cast<size_t>(i)]);
  std::sort(out.report.suspected_ids.begin(), out.report.suspected_ids.end());

  // Stage 4: semi-supervised fine-tuning of backbone and head. Unlabeled
  // samples contribute through confident pseudo-labels.
  auto labeled = data.select(kept);
  auto unlabeled = data.select(stripped);
  TrainConfig scfg = defense_train_config(cfg.semi_epochs, cfg.semi_lr, cfg.seed);
  scfg.batch_size = cfg.semi_batch;
  auto opt = make_sgd(model->parameters(), scfg);
  int64_t pseudo_used = 0;
  for (int64_t epoch = 0; epoch < cfg.semi_epochs; ++epoch) {
    set_lr(opt, scheduled_lr(scfg, epoch));
    auto ubatches = unlabeled.empty() ? std::vector<torch::Tensor>{}
                                      : make_batches(unlabeled.size(), cfg.semi_batch, rng);
    size_t u = 0;
    model->train();
    for (const auto& idx : make_batches(labeled.size(), cfg.semi_batch, rng)) {
      auto x = simclr_augment(labeled.batch_nchw(idx), gen);
      auto loss = F::cross_entropy(model->forward(x), labeled.labels().index_select(0, idx));
      if (!ubatches.empty()) {
        const auto& uidx = ubatches[u++ % ubatches.size()];
        auto ux = unlabeled.batch_nchw(uidx);
        torch::Tensor conf, pseudo;
        {
          torch::NoGradGuard guard;
          model->eval();
          std::tie(conf, pseudo) = torch::softmax(model->forward(ux), 1).max(1);
          model->train();
        }
        auto sel = conf.ge(cfg.confidence).nonzero().flatten();
        if (sel.size(0) > 0) {
          auto ulogits = model->forward(simclr_augment(ux.index_select(0, sel), gen));
          loss = loss + F::cross_entropy(ulogits, pseudo.index_select(0, sel)) *
                            (static_cast<double>(sel.size(0)) / static_cast<double>(uidx.size(0)));
          pseudo_used += sel.size(0);
        }
      }
      if (!std::isfinite(loss.item<double>()))
        throw TrainingFailure("semi-supervised stage diverged at epoch " + std::to_string(epoch));
      opt.zero_grad();
      loss.backward();
      opt.step();
    }
  }
  model->eval();
  out.model = ModelCheckpoint::capture(model, {{"dbd", stage_hash("dbd", cfg.to_json())}}, cfg.seed,
                                       {{"defense", "dbd"},
                                        {"labeled", kept.size()},
                                        {"unlabeled", stripped.size()},
                                        {"pseudo_labels_used", pseudo_used},
                                        {"embedding_variance", spread}});
  return out;
}

}  // namespace bdb::defenses
