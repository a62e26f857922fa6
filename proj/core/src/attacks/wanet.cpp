#include "bdb/attacks/wanet.hpp"

#include "bdb/error.hpp"
#include "bdb/hashing.hpp"

#include <random>

namespace bdb::attacks {

namespace F = torch::nn::functional;

namespace {

torch::Tensor identity_grid(int64_t h, int64_t w) {
  auto ys = torch::linspace(-1.0, 1.0, h, torch::kFloat32);
  auto xs = torch::linspace(-1.0, 1.0, w, torch::kFloat32);
  auto mesh = torch::meshgrid({ys, xs}, "ij");
  // grid_sample wants (x, y) in the last dimension.
  return torch::stack({mesh[1], mesh[0]}, 2).unsqueeze(0);
}

}  // namespace

WarpField WarpField::from_control_grid(const torch::Tensor& control_grid, ImageShape shape, double strength,
                                       double rescale, uint64_t seed) {
  if (control_grid.dim() != 3 || control_grid.size(2) != 2) throw ArgumentError("control grid must be k x k x 2");
  WarpField f;
  f.control_grid = control_grid.to(torch::kFloat32).contiguous();
  f.strength = strength;
  f.rescale = rescale;
  f.seed = seed;
  auto ins = f.control_grid.permute({2, 0, 1}).unsqueeze(0);
  auto up = F::interpolate(ins, F::InterpolateFuncOptions()
                                    .size(std::vector<int64_t>{shape.height, shape.width})
                                    .mode(torch::kBicubic)
                                    .align_corners(true));
  f.flow = (up.squeeze(0).permute({1, 2, 0}) * (strength / static_cast<double>(shape.height))).contiguous();
  return f;
}

WarpField WarpField::random(ImageShape shape, int64_t k, double strength, uint64_t seed, double rescale) {
  if (k < 2) throw ArgumentError("warp control grid needs k >= 2");
  std::mt19937_64 rng(seed ^ 0x3a4e7ULL);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  auto ins = torch::empty({k, k, 2}, torch::kFloat32);
  auto* p = ins.data_ptr<float>();
  for (int64_t i = 0; i < ins.numel(); ++i) p[i] = u(rng);
  ins = ins / ins.abs().mean();
  return from_control_grid(ins, shape, strength, rescale, seed);
}

WarpField WarpField::identity(ImageShape shape) {
  return from_control_grid(torch::zeros({4, 4, 2}), shape, 0.0, 1.0, 0);
}

torch::Tensor WarpField::grid() const {
  return (identity_grid(flow.size(0), flow.size(1)) + rescale * flow.unsqueeze(0)).clamp(-1.0, 1.0);
}

double WarpField::max_displacement_pixels() const {
  auto d = grid() - identity_grid(flow.size(0), flow.size(1));
  const auto h = static_cast<double>(flow.size(0)), w = static_cast<double>(flow.size(1));
  auto dx = d.select(3, 0).abs() * ((w - 1.0) / 2.0);
  auto dy = d.select(3, 1).abs() * ((h - 1.0) / 2.0);
  return torch::max(dx.max(), dy.max()).item<double>();
}

nlohmann::json WarpField::to_json() const {
  auto g = control_grid.contiguous();
  std::vector<float> values(g.data_ptr<float>(), g.data_ptr<float>() + g.numel());
  return {{"k", g.size(0)}, {"control_grid", values}, {"strength", strength}, {"rescale", rescale}, {"seed", seed}};
}

WarpField WarpField::from_json(const nlohmann::json& j, ImageShape shape) {
  try {
    const auto k = j.at("k").get<int64_t>();
    auto values = j.at("control_grid").get<std::vector<float>>();
    if (static_cast<int64_t>(values.size()) != k * k * 2) throw LoadError("warp control grid has the wrong size");
    auto grid = torch::tensor(values).view({k, k, 2});
    return from_control_grid(grid, shape, j.at("strength").get<double>(), j.at("rescale").get<double>(),
                             j.at("seed").get<uint64_t>());
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("malformed warp field: ") + e.what());
  }
}

torch::Tensor wanet_warp_nchw(const torch::Tensor& images, const WarpField& field, const torch::Tensor& noise) {
  auto grid = field.grid().expand({images.size(0), -1, -1, -1});
  if (noise.defined()) grid = (grid + noise).clamp(-1.0, 1.0);
  return F::grid_sample(images, grid.to(images.dtype()),
                        F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kBorder).align_corners(true))
      .clamp(0.0, 1.0);
}

torch::Tensor wanet_warp(const torch::Tensor& images, const WarpField& field, const torch::Tensor& noise) {
  const bool single = images.dim() == 3;
  auto batch = single ? images.unsqueeze(0) : images;
  if (batch.size(1) != field.flow.size(0) || batch.size(2) != field.flow.size(1))
    throw ArgumentError("warp field does not match the image size");
  auto out = to_nhwc(wanet_warp_nchw(to_nchw(batch), field, noise));
  return single ? out.squeeze(0) : out;
}

TrainConfig WanetConfig::wanet_default_train() {
  TrainConfig t;
  t.lr_schedule = LrSchedule::MultiStep;
  t.milestones = {100, 200, 300, 400};
  return t;
}

nlohmann::json WanetConfig::to_json() const {
  return {{"poison_ratio", poison_ratio}, {"cross_ratio", cross_ratio},   {"k", k},
          {"strength", strength},         {"grid_rescale", grid_rescale}, {"target_class", target_class},
          {"train", train.to_json()},     {"seed", seed}};
}

WanetConfig WanetConfig::from_json(const nlohmann::json& j) {
  WanetConfig c;
  c.poison_ratio = j.value("poison_ratio", c.poison_ratio);
  c.cross_ratio = j.value("cross_ratio", c.cross_ratio);
  c.k = j.value("k", c.k);
  c.strength = j.value("strength", c.strength);
  c.grid_rescale = j.value("grid_rescale", c.grid_rescale);
  c.target_class = j.value("target_class", c.target_class);
  if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
  c.seed = j.value("seed", c.seed);
  if (c.poison_ratio < 0.0 || c.poison_ratio > 1.0 || c.cross_ratio < 0.0)
    throw ConfigError("WaNet ratios must be non-negative and poison_ratio at most 1");
  return c;
}

WanetResult train_wanet(const LabeledDataset& data, Arch arch, const WanetConfig& cfg, const LabeledDataset* test) {
  if (data.empty()) throw ArgumentError("train_wanet: empty dataset");
  if (cfg.target_class < 0 || cfg.target_class >= data.n_classes()) throw ConfigError("target class out of range");
  const auto shape = data.image_shape();
  auto field = WarpField::random(shape, cfg.k, cfg.strength, cfg.seed, cfg.grid_rescale);
  torch::manual_seed(cfg.train.seed);
  auto model = make_classifier({arch, data.n_classes(), shape});
  auto noise_gen = std::make_shared<std::mt19937_64>(cfg.seed ^ 0x9015eULL);

  StepFn step = [&](Classifier& m, const Batch& b) {
    const auto bs = b.images.size(0);
    const auto n_bd = std::min<int64_t>(bs, static_cast<int64_t>(static_cast<double>(bs) * cfg.poison_ratio));
    const auto n_cross = std::min<int64_t>(bs - n_bd, static_cast<int64_t>(static_cast<double>(n_bd) * cfg.cross_ratio));
    std::vector<torch::Tensor> xs, ys;
    if (n_bd > 0) {
      xs.push_back(wanet_warp_nchw(b.images.slice(0, 0, n_bd), field));
      ys.push_back(torch::full({n_bd}, cfg.target_class, torch::kInt64));
    }
    if (n_cross > 0) {
      std::uniform_real_distribution<float> u(-1.0f, 1.0f);
      auto noise = torch::empty({n_cross, shape.height, shape.width, 2}, torch::kFloat32);
      auto* p = noise.data_ptr<float>();
      for (int64_t i = 0; i < noise.numel(); ++i) p[i] = u(*noise_gen);
      noise /= static_cast<double>(shape.height);
      xs.push_back(wanet_warp_nchw(b.images.slice(0, n_bd, n_bd + n_cross), field, noise));
      ys.push_back(b.labels.slice(0, n_bd, n_bd + n_cross));
    }
    xs.push_back(b.images.slice(0, n_bd + n_cross));
    ys.push_back(b.labels.slice(0, n_bd + n_cross));
    auto x = torch::cat(xs), y = torch::cat(ys);
    auto logits = m->forward(x);
    return StepOutput{torch::nn::functional::cross_entropy(logits, y), logits, y};
  };
  fit(model, data, cfg.train, step);

  nlohmann::json meta = {{"epochs", cfg.train.epochs}, {"train_samples", data.size()}, {"attack", "wanet"}};
  meta["final_train_accuracy"] = accuracy(model, data);
  if (test) meta["final_test_accuracy"] = accuracy(model, *test);
  auto ckpt = ModelCheckpoint::capture(
      model, {{"attack-train:wanet", config_hash({{"wanet", cfg.to_json()}, {"dataset", data.name()}, {"arch", to_string(arch)}})}},
      cfg.train.seed, meta);
  return {std::move(ckpt), std::move(field)};
}

}  // namespace bdb::attacks
