#include "bdb/attacks/input_aware.hpp"

#include "bdb/error.hpp"
#include "bdb/hashing.hpp"

#include <cmath>
#include <iostream>
#include <random>

namespace bdb::attacks {

namespace nn = torch::nn;

namespace {

void add_conv_bn_relu(nn::Sequential& s, int64_t in, int64_t out) {
  s->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1)));
  s->push_back(nn::BatchNorm2d(out));
  s->push_back(nn::ReLU());
}

nn::Upsample up2() {
  return nn::Upsample(nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kBilinear).align_corners(false));
}

double multistep(double lr, const std::vector<int64_t>& milestones, double gamma, int64_t epoch) {
  for (auto m : milestones)
    if (epoch >= m) lr *= gamma;
  return lr;
}

}  // namespace

GeneratorImpl::GeneratorImpl(int64_t in_channels, int64_t out_channels, int64_t width)
    : in_(in_channels), out_(out_channels), width_(width) {
  nn::Sequential s;
  add_conv_bn_relu(s, in_channels, width);
  add_conv_bn_relu(s, width, width);
  s->push_back(nn::MaxPool2d(2));
  add_conv_bn_relu(s, width, 2 * width);
  s->push_back(nn::MaxPool2d(2));
  add_conv_bn_relu(s, 2 * width, 2 * width);
  s->push_back(up2());
  add_conv_bn_relu(s, 2 * width, width);
  s->push_back(up2());
  add_conv_bn_relu(s, width, width);
  s->push_back(nn::Conv2d(nn::Conv2dOptions(width, out_channels, 3).padding(1)));
  body_ = register_module("body", s);
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& x) { return body_->forward(x); }

torch::Tensor mask_threshold(const torch::Tensor& raw) { return torch::tanh(raw * 20.0 - 10.0) / 2.0 + 0.5; }

torch::Tensor diversity_loss(const torch::Tensor& inputs1, const torch::Tensor& inputs2, const torch::Tensor& out1,
                             const torch::Tensor& out2) {
  auto d_in = (inputs1 - inputs2).pow(2).flatten(1).mean(1).sqrt();
  auto d_out = (out1 - out2).pow(2).flatten(1).mean(1).sqrt();
  return (d_in / (d_out + 1e-7)).mean();
}

torch::Tensor GeneratorBundle::patterns(const torch::Tensor& images_nchw) {
  return (torch::tanh(pattern_generator->forward(images_nchw)) + 1.0) / 2.0;
}

torch::Tensor GeneratorBundle::masks(const torch::Tensor& images_nchw) {
  return mask_threshold(mask_generator->forward(images_nchw));
}

torch::Tensor GeneratorBundle::apply_nchw(const torch::Tensor& images, const torch::Tensor& source) {
  const auto& src = source.defined() ? source : images;
  return (images + (patterns(src) - images) * masks(src)).clamp(0.0, 1.0);
}

torch::Tensor GeneratorBundle::apply(const torch::Tensor& images_nhwc, const torch::Tensor& source_nhwc) {
  torch::NoGradGuard guard;
  pattern_generator->eval();
  mask_generator->eval();
  std::vector<torch::Tensor> parts;
  for (int64_t s = 0; s < images_nhwc.size(0); s += 256) {
    const auto e = std::min(images_nhwc.size(0), s + 256);
    auto x = to_nchw(images_nhwc.slice(0, s, e));
    auto src = source_nhwc.defined() ? to_nchw(source_nhwc.slice(0, s, e)) : torch::Tensor();
    parts.push_back(to_nhwc(apply_nchw(x, src)));
  }
  if (parts.empty()) return images_nhwc.clone();
  return torch::cat(parts);
}

nlohmann::json InputAwareConfig::to_json() const {
  return {{"lr_classifier", lr_classifier},
          {"lr_generator", lr_generator},
          {"lr_mask", lr_mask},
          {"milestones_classifier", milestones_classifier},
          {"milestones_generator", milestones_generator},
          {"milestones_mask", milestones_mask},
          {"gamma", gamma},
          {"lambda_div", lambda_div},
          {"lambda_norm", lambda_norm},
          {"mask_density", mask_density},
          {"cross_ratio", cross_ratio},
          {"attack_ratio", attack_ratio},
          {"mask_epochs", mask_epochs},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"generator_width", generator_width},
          {"target_class", target_class},
          {"seed", seed}};
}

InputAwareConfig InputAwareConfig::from_json(const nlohmann::json& j) {
  InputAwareConfig c;
  c.lr_classifier = j.value("lr_classifier", c.lr_classifier);
  c.lr_generator = j.value("lr_generator", c.lr_generator);
  c.lr_mask = j.value("lr_mask", c.lr_mask);
  c.milestones_classifier = j.value("milestones_classifier", c.milestones_classifier);
  c.milestones_generator = j.value("milestones_generator", c.milestones_generator);
  c.milestones_mask = j.value("milestones_mask", c.milestones_mask);
  c.gamma = j.value("gamma", c.gamma);
  c.lambda_div = j.value("lambda_div", c.lambda_div);
  c.lambda_norm = j.value("lambda_norm", c.lambda_norm);
  c.mask_density = j.value("mask_density", c.mask_density);
  c.cross_ratio = j.value("cross_ratio", c.cross_ratio);
  c.attack_ratio = j.value("attack_ratio", c.attack_ratio);
  c.mask_epochs = j.value("mask_epochs", c.mask_epochs);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.generator_width = j.value("generator_width", c.generator_width);
  c.target_class = j.value("target_class", c.target_class);
  c.seed = j.value("seed", c.seed);
  c.verbose = j.value("verbose", c.verbose);
  if (c.attack_ratio < 0.0 || c.attack_ratio > 1.0 || c.cross_ratio < 0.0 || c.mask_density <= 0.0)
    throw ConfigError("invalid input-aware ratios");
  if (c.batch_size < 2 || c.mask_epochs < 0 || c.epochs < 0) throw ConfigError("invalid input-aware schedule");
  return c;
}

InputAwareResult train_input_aware(const LabeledDataset& data, Arch arch, const InputAwareConfig& cfg,
                                   const LabeledDataset* test) {
  if (data.size() < 2) throw ArgumentError("train_input_aware needs at least two samples");
  if (cfg.target_class < 0 || cfg.target_class >= data.n_classes()) throw ConfigError("target class out of range");
  torch::manual_seed(cfg.seed);
  const auto shape = data.image_shape();
  GeneratorBundle bundle{Generator(shape.channels, shape.channels, cfg.generator_width),
                         Generator(shape.channels, 1, cfg.generator_width), std::nullopt};
  auto classifier = make_classifier({arch, data.n_classes(), shape});
  std::mt19937_64 rng(cfg.seed ^ 0x1a9a3eULL);
  InputAwareResult result;

  // Phase 1: the mask generator alone, pushed towards diverse masks of the
  // configured density.
  torch::optim::Adam opt_m(bundle.mask_generator->parameters(),
                           torch::optim::AdamOptions(cfg.lr_mask).betas({0.5, 0.9}));
  bundle.mask_generator->train();
  double density = 0.0;
  for (int64_t epoch = 0; epoch < cfg.mask_epochs; ++epoch) {
    for (auto& g : opt_m.param_groups())
      g.options().set_lr(multistep(cfg.lr_mask, cfg.milestones_mask, cfg.gamma, epoch));
    auto b1 = make_batches(data.size(), cfg.batch_size, rng);
    auto b2 = make_batches(data.size(), cfg.batch_size, rng);
    double density_sum = 0.0;
    int64_t n_seen = 0;
    for (size_t i = 0; i < b1.size(); ++i) {
      const auto n = std::min(b1[i].size(0), b2[i].size(0));
      auto x1 = data.batch_nchw(b1[i].slice(0, 0, n)), x2 = data.batch_nchw(b2[i].slice(0, 0, n));
      auto m1 = bundle.masks(x1), m2 = bundle.masks(x2);
      auto loss_norm = torch::relu(m1 - cfg.mask_density).mean();
      auto loss_div = diversity_loss(x1, x2, m1, m2);
      auto loss = cfg.lambda_norm * loss_norm + cfg.lambda_div * loss_div;
      opt_m.zero_grad();
      loss.backward();
      opt_m.step();
      density_sum += m1.mean().item<double>() * static_cast<double>(n);
      n_seen += n;
    }
    density = density_sum / static_cast<double>(std::max<int64_t>(1, n_seen));
    if (cfg.verbose) std::cerr << "mask epoch " << epoch + 1 << " density " << density << "\n";
  }
  bundle.mask_generator->eval();
  for (auto& p : bundle.mask_generator->parameters()) p.requires_grad_(false);
  if (cfg.mask_epochs > 0 && density < cfg.mask_density / 4.0)
    throw TrainingFailure("input-aware mask density collapsed to " + std::to_string(density));
  result.final_mask_density = density;

  // Phase 2: classifier and pattern generator together.
  torch::optim::SGD opt_c(classifier->parameters(),
                          torch::optim::SGDOptions(cfg.lr_classifier).momentum(0.9).weight_decay(5e-4));
  torch::optim::Adam opt_g(bundle.pattern_generator->parameters(),
                           torch::optim::AdamOptions(cfg.lr_generator).betas({0.5, 0.9}));
  classifier->train();
  bundle.pattern_generator->train();
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (auto& g : opt_c.param_groups())
      g.options().set_lr(multistep(cfg.lr_classifier, cfg.milestones_classifier, cfg.gamma, epoch));
    for (auto& g : opt_g.param_groups())
      g.options().set_lr(multistep(cfg.lr_generator, cfg.milestones_generator, cfg.gamma, epoch));
    auto b1 = make_batches(data.size(), cfg.batch_size, rng);
    auto b2 = make_batches(data.size(), cfg.batch_size, rng);
    double ce_sum = 0.0;
    int64_t correct = 0, seen = 0;
    for (size_t i = 0; i < b1.size(); ++i) {
      const auto n = std::min(b1[i].size(0), b2[i].size(0));
      auto idx1 = b1[i].slice(0, 0, n), idx2 = b2[i].slice(0, 0, n);
      auto x1 = data.batch_nchw(idx1), x2 = data.batch_nchw(idx2);
      auto y1 = data.labels().index_select(0, idx1);
      const auto n_bd = static_cast<int64_t>(static_cast<double>(n) * cfg.attack_ratio);
      const auto n_cross = std::min<int64_t>(n - n_bd, static_cast<int64_t>(static_cast<double>(n_bd) * cfg.cross_ratio));

      auto p1 = bundle.patterns(x1), p2 = bundle.patterns(x2);
      torch::Tensor m1, m2;
      {
        torch::NoGradGuard guard;
        m1 = bundle.masks(x1);
        m2 = bundle.masks(x2);
      }
      std::vector<torch::Tensor> xs, ys;
      if (n_bd > 0) {
        auto xb = x1.slice(0, 0, n_bd);
        xs.push_back(xb + (p1.slice(0, 0, n_bd) - xb) * m1.slice(0, 0, n_bd));
        ys.push_back(torch::full({n_bd}, cfg.target_class, torch::kInt64));
      }
      if (n_cross > 0) {
        auto xc = x1.slice(0, n_bd, n_bd + n_cross);
        xs.push_back(xc + (p2.slice(0, n_bd, n_bd + n_cross) - xc) * m2.slice(0, n_bd, n_bd + n_cross));
        ys.push_back(y1.slice(0, n_bd, n_bd + n_cross));
      }
      xs.push_back(x1.slice(0, n_bd + n_cross));
      ys.push_back(y1.slice(0, n_bd + n_cross));
      auto x = torch::cat(xs), y = torch::cat(ys);
      auto logits = classifier->forward(x);
      auto ce = torch::nn::functional::cross_entropy(logits, y);
      auto div = n_bd > 0 ? diversity_loss(x1.slice(0, 0, n_bd), x2.slice(0, 0, n_bd), p1.slice(0, 0, n_bd),
                                           p2.slice(0, 0, n_bd)) * cfg.lambda_div
                          : torch::zeros({});
      auto loss = ce + div;
      if (!std::isfinite(loss.item<double>()))
        throw TrainingFailure("input-aware training diverged at joint epoch " + std::to_string(epoch));
      opt_c.zero_grad();
      opt_g.zero_grad();
      loss.backward();
      opt_c.step();
      opt_g.step();
      result.last_losses = {ce.item<double>(), div.item<double>()};
      ce_sum += ce.item<double>() * static_cast<double>(n);
      correct += logits.argmax(1).eq(y).sum().item<int64_t>();
      seen += n;
    }
    if (cfg.verbose)
      std::cerr << "joint epoch " << epoch + 1 << "/" << cfg.epochs << " ce " << ce_sum / seen << " acc "
                << 100.0 * static_cast<double>(correct) / static_cast<double>(seen) << "\n";
  }
  classifier->eval();
  bundle.pattern_generator->eval();

  nlohmann::json meta = {{"epochs", cfg.epochs}, {"mask_epochs", cfg.mask_epochs}, {"attack", "input-aware"},
                         {"train_samples", data.size()}, {"mask_density", density}};
  meta["final_train_accuracy"] = accuracy(classifier, data);
  if (test) meta["final_test_accuracy"] = accuracy(classifier, *test);
  bundle.classifier = ModelCheckpoint::capture(
      classifier,
      {{"attack-train:input-aware",
        config_hash({{"input_aware", cfg.to_json()}, {"dataset", data.name()}, {"arch", to_string(arch)}})}},
      cfg.seed, meta);
  result.bundle = std::move(bundle);
  result.attack_ratio = cfg.attack_ratio;
  return result;
}

void save_generator(Generator& g, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  torch::serialize::OutputArchive archive;
  archive.write("meta.in", torch::tensor(g->in_channels()));
  archive.write("meta.out", torch::tensor(g->out_channels()));
  archive.write("meta.width", torch::tensor(g->width()));
  g->save(archive);
  archive.save_to(path.string());
}

Generator load_generator(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw LoadError("generator not found: " + path.string());
  try {
    torch::serialize::InputArchive archive;
    archive.load_from(path.string());
    torch::Tensor in, out, width;
    archive.read("meta.in", in);
    archive.read("meta.out", out);
    archive.read("meta.width", width);
    Generator g(in.item<int64_t>(), out.item<int64_t>(), width.item<int64_t>());
    g->load(archive);
    g->eval();
    return g;
  } catch (const c10::Error& e) {
    throw LoadError("corrupt generator " + path.string() + ": " + e.what_without_backtrace());
  }
}

void save_bundle(GeneratorBundle& bundle, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_generator(bundle.pattern_generator, dir / "pattern_generator.pt");
  save_generator(bundle.mask_generator, dir / "mask_generator.pt");
  if (!bundle.classifier) throw ArgumentError("generator bundle has no classifier");
  save_checkpoint(*bundle.classifier, dir / "classifier.ckpt");
}

GeneratorBundle load_bundle(const std::filesystem::path& dir) {
  return {load_generator(dir / "pattern_generator.pt"), load_generator(dir / "mask_generator.pt"),
          load_checkpoint(dir / "classifier.ckpt")};
}

}  // namespace bdb::attacks
