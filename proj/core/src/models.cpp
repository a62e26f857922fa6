#include "bdb/models.hpp"

#include "bdb/error.hpp"

#include <algorithm>
#include <cmath>

namespace bdb {

namespace nn = torch::nn;

std::string to_string(Arch arch) {
  switch (arch) {
    case Arch::SmallCNN: return "small-cnn";
    case Arch::PreActResNet18: return "preact-resnet18";
    case Arch::VGG19: return "vgg19";
    case Arch::EfficientNetB3: return "efficientnet-b3";
    case Arch::MobileNetV3Large: return "mobilenetv3-large";
    case Arch::DenseNet161: return "densenet161";
  }
  return "unknown";
}

std::vector<Arch> all_archs() {
  return {Arch::SmallCNN, Arch::PreActResNet18, Arch::VGG19, Arch::EfficientNetB3, Arch::MobileNetV3Large,
          Arch::DenseNet161};
}

Arch arch_from_string(std::string_view name) {
  for (auto a : all_archs())
    if (to_string(a) == name) return a;
  std::string known;
  for (auto a : all_archs()) known += " " + to_string(a);
  throw ArgumentError("unknown architecture '" + std::string(name) + "'; expected one of:" + known);
}

// ---------------------------------------------------------------------------
// GatedBatchNorm2d

GatedBatchNorm2dImpl::GatedBatchNorm2dImpl(int64_t channels, double momentum, double eps)
    : channels_(channels), momentum_(momentum), eps_(eps) {
  weight_ = register_parameter("weight", torch::ones({channels}));
  bias_ = register_parameter("bias", torch::zeros({channels}));
  running_mean_ = register_buffer("running_mean", torch::zeros({channels}));
  running_var_ = register_buffer("running_var", torch::ones({channels}));
  gate_ = register_buffer("gate", torch::ones({channels}));
}

void GatedBatchNorm2dImpl::set_gate(const torch::Tensor& gate) {
  if (gate.numel() != channels_) throw ArgumentError("gate size does not match channel count");
  torch::NoGradGuard guard;
  gate_.copy_(gate.reshape({channels_}));
}

torch::Tensor GatedBatchNorm2dImpl::forward(const torch::Tensor& x) {
  torch::Tensor w, b;
  if (perturbation_.mask.defined()) {
    const auto& p = perturbation_;
    w = p.perturb ? weight_ * (p.mask + p.weight_noise) : weight_ * p.mask;
    b = p.perturb ? bias_ * (1.0 + p.bias_noise) : bias_;
  } else {
    w = weight_ * gate_;
    b = bias_;
  }
  return torch::batch_norm(x, w, b, running_mean_, running_var_, is_training(), momentum_, eps_, false);
}

// ---------------------------------------------------------------------------
// Building blocks

namespace {

struct StageDef {
  std::string name;
  nn::Sequential body;
  int64_t out_channels;
};

struct Blueprint {
  std::vector<StageDef> stages;
  nn::Sequential pre_head{nullptr};
  int64_t pool_size = 1;
  int64_t penultimate_dim = 0;
};

nn::Conv2d conv(int64_t in, int64_t out, int64_t k, int64_t stride = 1, int64_t groups = 1, bool bias = false) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(k / 2).groups(groups).bias(bias));
}

enum class Act { None, ReLU, HardSwish, SiLU };

nn::Functional hardswish() {
  return nn::Functional([](const torch::Tensor& x) { return torch::hardswish(x); });
}

nn::AnyModule activation(Act act) {
  switch (act) {
    case Act::ReLU: return nn::AnyModule(nn::ReLU(nn::ReLUOptions(true)));
    case Act::HardSwish: return nn::AnyModule(hardswish());
    case Act::SiLU: return nn::AnyModule(nn::SiLU());
    case Act::None: break;
  }
  return nn::AnyModule(nn::Identity());
}

void conv_bn_act(nn::Sequential& seq, int64_t in, int64_t out, int64_t k, int64_t stride, Act act,
                 int64_t groups = 1) {
  seq->push_back(conv(in, out, k, stride, groups));
  seq->push_back(GatedBatchNorm2d(out));
  if (act != Act::None) seq->push_back(activation(act));
}

int64_t make_divisible(double v, int64_t divisor = 8) {
  auto r = std::max<int64_t>(divisor, static_cast<int64_t>(v + divisor / 2.0) / divisor * divisor);
  if (static_cast<double>(r) < 0.9 * v) r += divisor;
  return r;
}

class PreActBlockImpl : public nn::Module {
 public:
  PreActBlockImpl(int64_t in, int64_t out, int64_t stride)
      : bn1(register_module("bn1", GatedBatchNorm2d(in))),
        conv1(register_module("conv1", conv(in, out, 3, stride))),
        bn2(register_module("bn2", GatedBatchNorm2d(out))),
        conv2(register_module("conv2", conv(out, out, 3, 1))) {
    if (stride != 1 || in != out) shortcut = register_module("shortcut", conv(in, out, 1, stride));
  }
  torch::Tensor forward(const torch::Tensor& x) {
    auto out = torch::relu(bn1(x));
    auto sc = shortcut ? shortcut(out) : x;
    out = conv1(out);
    out = conv2(torch::relu(bn2(out)));
    return out + sc;
  }
  GatedBatchNorm2d bn1;
  nn::Conv2d conv1;
  GatedBatchNorm2d bn2;
  nn::Conv2d conv2;
  nn::Conv2d shortcut{nullptr};
};
TORCH_MODULE(PreActBlock);

class SqueezeExciteImpl : public nn::Module {
 public:
  SqueezeExciteImpl(int64_t channels, int64_t squeeze, bool hard_gate, Act inner)
      : fc1(register_module("fc1", nn::Conv2d(nn::Conv2dOptions(channels, squeeze, 1)))),
        fc2(register_module("fc2", nn::Conv2d(nn::Conv2dOptions(squeeze, channels, 1)))),
        hard_gate_(hard_gate),
        inner_(inner) {}
  torch::Tensor forward(const torch::Tensor& x) {
    auto s = torch::adaptive_avg_pool2d(x, {1, 1});
    s = fc1(s);
    s = inner_ == Act::SiLU ? torch::silu(s) : torch::relu(s);
    s = fc2(s);
    s = hard_gate_ ? torch::hardsigmoid(s) : torch::sigmoid(s);
    return x * s;
  }
  nn::Conv2d fc1, fc2;

 private:
  bool hard_gate_;
  Act inner_;
};
TORCH_MODULE(SqueezeExcite);

/// Inverted residual (MobileNetV3 and EfficientNet MBConv share it).
class InvertedResidualImpl : public nn::Module {
 public:
  InvertedResidualImpl(int64_t in, int64_t kernel, int64_t expanded, int64_t out, int64_t squeeze, Act act,
                       int64_t stride, bool hard_gate)
      : residual_(stride == 1 && in == out) {
    body = register_module("body", nn::Sequential());
    if (expanded != in) conv_bn_act(body, in, expanded, 1, 1, act);
    conv_bn_act(body, expanded, expanded, kernel, stride, act, expanded);
    if (squeeze > 0) body->push_back(SqueezeExcite(expanded, squeeze, hard_gate, hard_gate ? Act::ReLU : Act::SiLU));
    conv_bn_act(body, expanded, out, 1, 1, Act::None);
  }
  torch::Tensor forward(const torch::Tensor& x) {
    auto y = body->forward(x);
    return residual_ ? y + x : y;
  }
  nn::Sequential body{nullptr};

 private:
  bool residual_;
};
TORCH_MODULE(InvertedResidual);

class DenseLayerImpl : public nn::Module {
 public:
  DenseLayerImpl(int64_t in, int64_t growth, int64_t bn_size)
      : bn1(register_module("bn1", GatedBatchNorm2d(in))),
        conv1(register_module("conv1", conv(in, bn_size * growth, 1))),
        bn2(register_module("bn2", GatedBatchNorm2d(bn_size * growth))),
        conv2(register_module("conv2", conv(bn_size * growth, growth, 3))) {}
  torch::Tensor forward(const torch::Tensor& x) {
    auto y = conv1(torch::relu(bn1(x)));
    y = conv2(torch::relu(bn2(y)));
    return torch::cat({x, y}, 1);
  }
  GatedBatchNorm2d bn1;
  nn::Conv2d conv1;
  GatedBatchNorm2d bn2;
  nn::Conv2d conv2;
};
TORCH_MODULE(DenseLayer);

// ---------------------------------------------------------------------------
// Architectures

constexpr int64_t kSmallWidth1 = 16;
constexpr int64_t kSmallWidth2 = 32;

Blueprint small_cnn(const ModelSpec& spec) {
  Blueprint bp;
  nn::Sequential b1, b2;
  conv_bn_act(b1, spec.input.channels, kSmallWidth1, 3, 1, Act::ReLU);
  b1->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(2)));
  conv_bn_act(b2, kSmallWidth1, kSmallWidth2, 3, 1, Act::ReLU);
  b2->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(2)));
  bp.stages = {{"block1", b1, kSmallWidth1}, {"block2", b2, kSmallWidth2}};
  bp.pool_size = 4;
  bp.penultimate_dim = kSmallWidth2 * 16;
  return bp;
}

Blueprint preact_resnet18(const ModelSpec& spec) {
  Blueprint bp;
  nn::Sequential stem;
  stem->push_back(conv(spec.input.channels, 64, 3));
  bp.stages.push_back({"stem", stem, 64});
  int64_t in = 64;
  const int64_t widths[] = {64, 128, 256, 512};
  for (int i = 0; i < 4; ++i) {
    nn::Sequential layer;
    layer->push_back(PreActBlock(in, widths[i], i == 0 ? 1 : 2));
    layer->push_back(PreActBlock(widths[i], widths[i], 1));
    in = widths[i];
    bp.stages.push_back({"layer" + std::to_string(i + 1), layer, in});
  }
  bp.penultimate_dim = 512;
  return bp;
}

Blueprint vgg19(const ModelSpec& spec) {
  Blueprint bp;
  const std::vector<std::vector<int64_t>> blocks = {
      {64, 64}, {128, 128}, {256, 256, 256, 256}, {512, 512, 512, 512}, {512, 512, 512, 512}};
  int64_t in = spec.input.channels;
  for (size_t b = 0; b < blocks.size(); ++b) {
    nn::Sequential seq;
    for (auto w : blocks[b]) {
      conv_bn_act(seq, in, w, 3, 1, Act::ReLU);
      in = w;
    }
    seq->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(2)));
    bp.stages.push_back({"block" + std::to_string(b + 1), seq, in});
  }
  bp.penultimate_dim = 512;
  return bp;
}

Blueprint mobilenet_v3_large(const ModelSpec& spec) {
  struct Row {
    int64_t in, kernel, expanded, out;
    bool se;
    Act act;
    int64_t stride;
  };
  const Row rows[] = {
      {16, 3, 16, 16, false, Act::ReLU, 1},       {16, 3, 64, 24, false, Act::ReLU, 2},
      {24, 3, 72, 24, false, Act::ReLU, 1},       {24, 5, 72, 40, true, Act::ReLU, 2},
      {40, 5, 120, 40, true, Act::ReLU, 1},       {40, 5, 120, 40, true, Act::ReLU, 1},
      {40, 3, 240, 80, false, Act::HardSwish, 2}, {80, 3, 200, 80, false, Act::HardSwish, 1},
      {80, 3, 184, 80, false, Act::HardSwish, 1}, {80, 3, 184, 80, false, Act::HardSwish, 1},
      {80, 3, 480, 112, true, Act::HardSwish, 1}, {112, 3, 672, 112, true, Act::HardSwish, 1},
      {112, 5, 672, 160, true, Act::HardSwish, 2}, {160, 5, 960, 160, true, Act::HardSwish, 1},
      {160, 5, 960, 160, true, Act::HardSwish, 1},
  };
  // Stage boundaries at each resolution change.
  const std::vector<std::pair<size_t, size_t>> groups = {{0, 1}, {1, 3}, {3, 6}, {6, 12}, {12, 15}};
  Blueprint bp;
  for (size_t g = 0; g < groups.size(); ++g) {
    nn::Sequential seq;
    if (g == 0) conv_bn_act(seq, spec.input.channels, 16, 3, 2, Act::HardSwish);
    for (size_t r = groups[g].first; r < groups[g].second; ++r) {
      const auto& row = rows[r];
      seq->push_back(InvertedResidual(row.in, row.kernel, row.expanded, row.out,
                                      row.se ? make_divisible(row.expanded / 4.0) : 0, row.act, row.stride, true));
    }
    int64_t out = rows[groups[g].second - 1].out;
    if (g + 1 == groups.size()) {
      conv_bn_act(seq, out, 960, 1, 1, Act::HardSwish);
      out = 960;
    }
    bp.stages.push_back({(g == 0 ? std::string("stem") : "stage" + std::to_string(g + 1)), seq, out});
  }
  bp.pre_head = nn::Sequential(nn::Linear(960, 1280), hardswish(), nn::Dropout(0.2));
  bp.penultimate_dim = 1280;
  return bp;
}

Blueprint efficientnet_b3(const ModelSpec& spec) {
  struct Row {
    int64_t expand, kernel, stride, in, out, layers;
  };
  // B0 table scaled by width 1.2 and depth 1.4.
  const Row base[] = {{1, 3, 1, 32, 16, 1},  {6, 3, 2, 16, 24, 2},  {6, 5, 2, 24, 40, 2},  {6, 3, 2, 40, 80, 3},
                      {6, 5, 1, 80, 112, 3}, {6, 5, 2, 112, 192, 4}, {6, 3, 1, 192, 320, 1}};
  auto width = [](int64_t c) { return make_divisible(static_cast<double>(c) * 1.2); };
  auto depth = [](int64_t n) { return static_cast<int64_t>(std::ceil(static_cast<double>(n) * 1.4)); };
  const std::vector<std::pair<size_t, size_t>> groups = {{0, 1}, {1, 2}, {2, 3}, {3, 5}, {5, 7}};
  Blueprint bp;
  const int64_t stem_out = width(32);
  for (size_t g = 0; g < groups.size(); ++g) {
    nn::Sequential seq;
    if (g == 0) conv_bn_act(seq, spec.input.channels, stem_out, 3, 2, Act::SiLU);
    int64_t out = 0;
    for (size_t r = groups[g].first; r < groups[g].second; ++r) {
      const auto& row = base[r];
      int64_t in = width(row.in);
      out = width(row.out);
      for (int64_t l = 0; l < depth(row.layers); ++l) {
        const int64_t block_in = l == 0 ? in : out;
        const int64_t squeeze = std::max<int64_t>(1, block_in / 4);
        seq->push_back(InvertedResidual(block_in, row.kernel, block_in * row.expand, out, squeeze, Act::SiLU,
                                        l == 0 ? row.stride : 1, false));
      }
    }
    if (g + 1 == groups.size()) {
      conv_bn_act(seq, out, 4 * out, 1, 1, Act::SiLU);
      out = 4 * out;
    }
    bp.stages.push_back({(g == 0 ? std::string("stem") : "stage" + std::to_string(g + 1)), seq, out});
  }
  bp.pre_head = nn::Sequential(nn::Dropout(0.3));
  bp.penultimate_dim = bp.stages.back().out_channels;
  return bp;
}

Blueprint densenet161(const ModelSpec& spec) {
  constexpr int64_t growth = 48, bn_size = 4, init = 96;
  const int64_t block_layers[] = {6, 12, 36, 24};
  Blueprint bp;
  nn::Sequential stem;
  stem->push_back(conv(spec.input.channels, init, 3));
  bp.stages.push_back({"stem", stem, init});
  int64_t ch = init;
  for (int b = 0; b < 4; ++b) {
    nn::Sequential seq;
    for (int64_t l = 0; l < block_layers[b]; ++l) {
      seq->push_back(DenseLayer(ch, growth, bn_size));
      ch += growth;
    }
    if (b < 3) {
      seq->push_back(GatedBatchNorm2d(ch));
      seq->push_back(nn::ReLU(nn::ReLUOptions(true)));
      seq->push_back(conv(ch, ch / 2, 1));
      seq->push_back(nn::AvgPool2d(nn::AvgPool2dOptions(2)));
      ch /= 2;
    } else {
      seq->push_back(GatedBatchNorm2d(ch));
      seq->push_back(nn::ReLU(nn::ReLUOptions(true)));
    }
    bp.stages.push_back({"dense" + std::to_string(b + 1), seq, ch});
  }
  bp.penultimate_dim = ch;
  return bp;
}

Blueprint blueprint(const ModelSpec& spec) {
  switch (spec.arch) {
    case Arch::SmallCNN: return small_cnn(spec);
    case Arch::PreActResNet18: return preact_resnet18(spec);
    case Arch::VGG19: return vgg19(spec);
    case Arch::EfficientNetB3: return efficientnet_b3(spec);
    case Arch::MobileNetV3Large: return mobilenet_v3_large(spec);
    case Arch::DenseNet161: return densenet161(spec);
  }
  throw ArgumentError("unsupported architecture");
}

}  // namespace

// ---------------------------------------------------------------------------
// Classifier

ClassifierImpl::ClassifierImpl(ModelSpec spec) : spec_(spec) {
  if (spec.n_classes < 2) throw ArgumentError("classifier needs at least two classes");
  auto bp = blueprint(spec);
  for (auto& s : bp.stages) {
    stage_names_.push_back(s.name);
    stages_.push_back(register_module(s.name, s.body));
  }
  last_channels_ = bp.stages.back().out_channels;
  pool_size_ = bp.pool_size;
  if (bp.pre_head) pre_head_ = register_module("pre_head", bp.pre_head);
  feature_dim_ = bp.penultimate_dim;
  head_ = register_module("head", nn::Linear(feature_dim_, spec.n_classes));
  channel_mask_ = register_buffer("channel_mask", torch::ones({last_channels_}));
}

ClassifierImpl::Trace ClassifierImpl::trace(const torch::Tensor& x) {
  Trace t;
  auto h = x;
  for (size_t i = 0; i < stages_.size(); ++i) {
    h = stages_[i]->forward(h);
    if (i + 1 == stages_.size()) h = h * channel_mask_.view({1, -1, 1, 1});
    t.stages.push_back(h);
  }
  auto pooled = torch::adaptive_avg_pool2d(h, {pool_size_, pool_size_}).flatten(1);
  t.penultimate = pre_head_ ? pre_head_->forward(pooled) : pooled;
  t.logits = head_(t.penultimate);
  return t;
}

torch::Tensor ClassifierImpl::last_stage(const torch::Tensor& x) {
  auto h = x;
  for (auto& stage : stages_) h = stage->forward(h);
  return h;
}

torch::Tensor ClassifierImpl::logits_from_last_stage(const torch::Tensor& h) {
  auto masked = h * channel_mask_.view({1, -1, 1, 1});
  auto pooled = torch::adaptive_avg_pool2d(masked, {pool_size_, pool_size_}).flatten(1);
  return head_(pre_head_ ? pre_head_->forward(pooled) : pooled);
}

torch::Tensor ClassifierImpl::forward(const torch::Tensor& x) { return logits_from_last_stage(last_stage(x)); }

std::vector<std::string> ClassifierImpl::layer_ids() const {
  auto ids = stage_names_;
  ids.emplace_back("penultimate");
  ids.emplace_back("logits");
  return ids;
}

int64_t ClassifierImpl::stage_index(const std::string& layer) const {
  auto it = std::find(stage_names_.begin(), stage_names_.end(), layer);
  if (it != stage_names_.end()) return it - stage_names_.begin();
  if (layer == "penultimate" || layer == "logits") return -1;
  std::string valid;
  for (const auto& id : layer_ids()) valid += " " + id;
  throw ArgumentError("unknown layer '" + layer + "' for " + to_string(spec_.arch) + "; valid layers:" + valid);
}

torch::Tensor ClassifierImpl::features(const torch::Tensor& x, const std::string& layer) {
  const auto idx = stage_index(layer);
  if (layer == "logits") return forward(x);
  auto t = trace(x);
  if (layer == "penultimate") return t.penultimate;
  return t.stages[static_cast<size_t>(idx)].flatten(1);
}

void ClassifierImpl::set_channel_mask(const torch::Tensor& mask) {
  if (mask.numel() != last_channels_) throw ArgumentError("channel mask size does not match last stage");
  torch::NoGradGuard guard;
  channel_mask_.copy_(mask.reshape({last_channels_}).to(torch::kFloat32));
}

std::vector<size_t> ClassifierImpl::attention_taps() const {
  std::vector<size_t> taps;
  const size_t n = stages_.size();
  for (size_t i = n > 3 ? n - 3 : 0; i < n; ++i) taps.push_back(i);
  return taps;
}

std::vector<GatedBatchNorm2d> ClassifierImpl::gated_norms() {
  std::vector<GatedBatchNorm2d> out;
  for (const auto& m : modules(/*include_self=*/false)) {
    if (auto g = std::dynamic_pointer_cast<GatedBatchNorm2dImpl>(m)) out.emplace_back(g);
  }
  return out;
}

Classifier make_classifier(const ModelSpec& spec) { return Classifier(spec); }

}  // namespace bdb
