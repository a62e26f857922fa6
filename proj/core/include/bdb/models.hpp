#pragma once

#include "bdb/dataset.hpp"

#include <torch/torch.h>

#include <string>
#include <string_view>
#include <vector>

namespace bdb {

enum class Arch { SmallCNN, PreActResNet18, VGG19, EfficientNetB3, MobileNetV3Large, DenseNet161 };

std::string to_string(Arch arch);
Arch arch_from_string(std::string_view name);
std::vector<Arch> all_archs();

struct ModelSpec {
  Arch arch = Arch::SmallCNN;
  int64_t n_classes = 10;
  ImageShape input{32, 32, 3};
  bool operator==(const ModelSpec&) const = default;
};

/// BatchNorm2d whose per-channel scale is multiplied by a gate. The gate is
/// a persistent buffer (pruned channels have gate 0). While a perturbation
/// session is active the gate is replaced by an external, optimizable mask
/// and both scale and shift can receive multiplicative noise.
class GatedBatchNorm2dImpl : public torch::nn::Module {
 public:
  explicit GatedBatchNorm2dImpl(int64_t channels, double momentum = 0.1, double eps = 1e-5);

  torch::Tensor forward(const torch::Tensor& x);

  int64_t channels() const { return channels_; }
  const torch::Tensor& gate() const { return gate_; }
  void set_gate(const torch::Tensor& gate);

  struct Perturbation {
    torch::Tensor mask;         // replaces gate while active
    torch::Tensor weight_noise; // added to mask when `perturb` is set
    torch::Tensor bias_noise;   // shift scaled by (1 + bias_noise) when `perturb` is set
    bool perturb = false;
  };
  void begin_perturbation(Perturbation p) { perturbation_ = std::move(p); }
  Perturbation* perturbation() { return perturbation_.mask.defined() ? &perturbation_ : nullptr; }
  void end_perturbation() { perturbation_ = {}; }

 private:
  int64_t channels_;
  double momentum_;
  double eps_;
  torch::Tensor weight_, bias_, running_mean_, running_var_, gate_;
  Perturbation perturbation_;
};
TORCH_MODULE(GatedBatchNorm2d);

/// Every architecture is a chain of named feature stages (each producing an
/// N x C x H x W map), a global pool, an optional pre-head, and a final
/// linear classifier. The last stage's output is multiplied by a persistent
/// per-channel mask (fine-pruning writes zeros there).
class ClassifierImpl : public torch::nn::Module {
 public:
  ClassifierImpl(ModelSpec spec);

  torch::Tensor forward(const torch::Tensor& x);
  /// Output of the last stage before the channel mask.
  torch::Tensor last_stage(const torch::Tensor& x);
  /// Logits from an unmasked last-stage map (applies the channel mask).
  torch::Tensor logits_from_last_stage(const torch::Tensor& h);

  struct Trace {
    std::vector<torch::Tensor> stages;  // one per stage, after masking for the last
    torch::Tensor penultimate;
    torch::Tensor logits;
  };
  Trace trace(const torch::Tensor& x);

  const ModelSpec& spec() const { return spec_; }
  const std::vector<std::string>& stage_names() const { return stage_names_; }
  /// Stage names, then "penultimate" and "logits".
  std::vector<std::string> layer_ids() const;
  /// N x D activations at `layer` (stage outputs are flattened).
  torch::Tensor features(const torch::Tensor& x, const std::string& layer);
  int64_t stage_index(const std::string& layer) const;

  int64_t feature_dim() const { return feature_dim_; }
  int64_t last_stage_channels() const { return last_channels_; }
  const torch::Tensor& channel_mask() const { return channel_mask_; }
  void set_channel_mask(const torch::Tensor& mask);

  /// Stage indices used as attention taps (the three deepest, or all if fewer).
  std::vector<size_t> attention_taps() const;
  std::vector<GatedBatchNorm2d> gated_norms();

  torch::nn::Linear head() const { return head_; }

 private:
  ModelSpec spec_;
  std::vector<std::string> stage_names_;
  std::vector<torch::nn::Sequential> stages_;
  torch::nn::Sequential pre_head_{nullptr};
  int64_t pool_size_ = 1;
  torch::nn::Linear head_{nullptr};
  torch::Tensor channel_mask_;
  int64_t feature_dim_ = 0;
  int64_t last_channels_ = 0;
};
TORCH_MODULE(Classifier);

Classifier make_classifier(const ModelSpec& spec);

/// N x H x W x C images -> N x C x H x W.
inline torch::Tensor to_nchw(const torch::Tensor& nhwc) { return nhwc.permute({0, 3, 1, 2}).contiguous(); }
inline torch::Tensor to_nhwc(const torch::Tensor& nchw) { return nchw.permute({0, 2, 3, 1}).contiguous(); }

}  // namespace bdb
