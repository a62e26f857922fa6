#include "bdb/attacks/ssba.hpp"

#include "bdb/error.hpp"
#include "bdb/models.hpp"

#include <random>

namespace bdb::attacks {

namespace nn = torch::nn;

nlohmann::json SsbaConfig::to_json() const {
  return {{"steps", steps},
          {"batch_size", batch_size},
          {"lr", lr},
          {"message_length", message_length},
          {"width", width},
          {"residual_scale", residual_scale},
          {"image_weight", image_weight},
          {"min_bit_accuracy", min_bit_accuracy},
          {"held_out", held_out},
          {"seed", seed}};
}

SsbaConfig SsbaConfig::from_json(const nlohmann::json& j) {
  SsbaConfig c;
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.message_length = j.value("message_length", c.message_length);
  c.width = j.value("width", c.width);
  c.residual_scale = j.value("residual_scale", c.residual_scale);
  c.image_weight = j.value("image_weight", c.image_weight);
  c.min_bit_accuracy = j.value("min_bit_accuracy", c.min_bit_accuracy);
  c.held_out = j.value("held_out", c.held_out);
  c.seed = j.value("seed", c.seed);
  if (c.steps < 0 || c.batch_size < 1 || c.message_length < 1 || c.width < 1)
    throw ConfigError("invalid SSBA encoder configuration");
  return c;
}

namespace {

void add_conv(nn::Sequential& s, int64_t in, int64_t out, int64_t stride = 1) {
  s->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1)));
  s->push_back(nn::ReLU());
}

}  // namespace

SsbaCodecNetImpl::SsbaCodecNetImpl(int64_t channels, int64_t message_length, int64_t width, double residual_scale)
    : channels_(channels), message_length_(message_length), width_(width), residual_scale_(residual_scale) {
  nn::Sequential enc, dec;
  add_conv(enc, channels + message_length, width);
  for (int i = 0; i < 3; ++i) add_conv(enc, width, width);
  enc->push_back(nn::Conv2d(nn::Conv2dOptions(width, channels, 1)));
  add_conv(dec, channels, width, 2);
  add_conv(dec, width, width, 2);
  add_conv(dec, width, width);
  dec->push_back(nn::AdaptiveAvgPool2d(nn::AdaptiveAvgPool2dOptions(1)));
  dec->push_back(nn::Flatten());
  dec->push_back(nn::Linear(width, message_length));
  encoder_ = register_module("encoder", enc);
  decoder_ = register_module("decoder", dec);
}

torch::Tensor SsbaCodecNetImpl::encode(const torch::Tensor& images, const torch::Tensor& bits) {
  auto planes = bits.to(images.dtype()).view({bits.size(0), bits.size(1), 1, 1});
  planes = (planes * 2.0 - 1.0).expand({bits.size(0), bits.size(1), images.size(2), images.size(3)});
  auto residual = torch::tanh(encoder_->forward(torch::cat({images, planes}, 1))) * residual_scale_;
  return (images + residual).clamp(0.0, 1.0);
}

torch::Tensor SsbaCodecNetImpl::decode(const torch::Tensor& images) { return decoder_->forward(images); }

SsbaTrainResult train_ssba_encoder(const LabeledDataset& data, const SsbaConfig& cfg) {
  if (data.size() <= cfg.held_out) throw ArgumentError("SSBA training needs more samples than the held-out set");
  torch::manual_seed(cfg.seed);
  const auto shape = data.image_shape();
  SsbaCodecNet net(shape.channels, cfg.message_length, cfg.width, cfg.residual_scale);
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(cfg.lr));
  const auto n_train = data.size() - cfg.held_out;
  std::mt19937_64 rng(cfg.seed ^ 0x55baULL);
  std::uniform_int_distribution<int64_t> pick(0, n_train - 1);
  net->train();
  for (int64_t step = 0; step < cfg.steps; ++step) {
    std::vector<int64_t> idx(static_cast<size_t>(cfg.batch_size));
    for (auto& i : idx) i = pick(rng);
    auto x = data.batch_nchw(torch::tensor(idx, torch::kInt64));
    auto bits = torch::randint(0, 2, {cfg.batch_size, cfg.message_length}, torch::kFloat32);
    auto encoded = net->encode(x, bits);
    auto loss = cfg.image_weight * torch::mse_loss(encoded, x) +
                torch::binary_cross_entropy_with_logits(net->decode(encoded), bits);
    opt.zero_grad();
    loss.backward();
    opt.step();
    if (!std::isfinite(loss.item<double>()))
      throw TrainingFailure("SSBA encoder diverged at step " + std::to_string(step));
  }
  auto codec = std::make_shared<SsbaCodec>(net);
  auto held = data.images().slice(0, n_train);
  auto bits = torch::randint(0, 2, {held.size(0), cfg.message_length}, torch::kFloat32);
  torch::Tensor encoded;
  {
    torch::NoGradGuard guard;
    encoded = to_nhwc(codec->net()->encode(to_nchw(held), bits));
  }
  const double acc = ssba_bit_accuracy(*codec, encoded, bits);
  if (acc < cfg.min_bit_accuracy)
    throw TrainingFailure("SSBA decoder recovers only " + std::to_string(acc) + " of held-out bits (need " +
                          std::to_string(cfg.min_bit_accuracy) + ")");
  return {codec, acc};
}

torch::Tensor apply_ssba(const torch::Tensor& images, SsbaCodec& codec, const std::vector<int>& bits) {
  if (static_cast<int64_t>(bits.size()) != codec.message_length())
    throw ArgumentError("message length does not match the SSBA encoder");
  const bool single = images.dim() == 3;
  auto batch = single ? images.unsqueeze(0) : images;
  std::vector<float> b(bits.begin(), bits.end());
  auto msg = torch::tensor(b).unsqueeze(0).expand({batch.size(0), codec.message_length()});
  torch::NoGradGuard guard;
  codec.net()->eval();
  std::vector<torch::Tensor> parts;
  for (int64_t s = 0; s < batch.size(0); s += 256) {
    const auto e = std::min(batch.size(0), s + 256);
    parts.push_back(to_nhwc(codec.net()->encode(to_nchw(batch.slice(0, s, e)), msg.slice(0, s, e))));
  }
  auto out = torch::cat(parts);
  return single ? out.squeeze(0) : out;
}

double ssba_bit_accuracy(SsbaCodec& codec, const torch::Tensor& encoded, const torch::Tensor& bits) {
  torch::NoGradGuard guard;
  codec.net()->eval();
  auto pred = codec.net()->decode(to_nchw(encoded)).gt(0.0).to(torch::kFloat32);
  return pred.eq(bits.to(torch::kFloat32)).to(torch::kFloat64).mean().item<double>();
}

void save_ssba_codec(SsbaCodec& codec, const std::filesystem::path& path) {
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  auto& net = codec.net();
  torch::serialize::OutputArchive archive;
  archive.write("meta.channels", torch::tensor(net->channels()));
  archive.write("meta.message_length", torch::tensor(net->message_length()));
  archive.write("meta.width", torch::tensor(net->width()));
  archive.write("meta.residual_scale", torch::tensor(std::vector<double>{net->residual_scale()}));
  net->save(archive);
  archive.save_to(path.string());
}

std::shared_ptr<SsbaCodec> load_ssba_codec(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw LoadError("SSBA encoder not found: " + path.string());
  try {
    torch::serialize::InputArchive archive;
    archive.load_from(path.string());
    torch::Tensor c, l, w, r;
    archive.read("meta.channels", c);
    archive.read("meta.message_length", l);
    archive.read("meta.width", w);
    archive.read("meta.residual_scale", r);
    SsbaCodecNet net(c.item<int64_t>(), l.item<int64_t>(), w.item<int64_t>(), r[0].item<double>());
    net->load(archive);
    return std::make_shared<SsbaCodec>(net);
  } catch (const c10::Error& e) {
    throw LoadError("corrupt SSBA encoder " + path.string() + ": " + e.what_without_backtrace());
  }
}

}  // namespace bdb::attacks
