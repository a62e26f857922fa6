#pragma once

#include "bdb/checkpoint.hpp"
#include "bdb/dataset.hpp"
#include "bdb/training.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <filesystem>
#include <memory>
#include <optional>

namespace bdb::attacks {

/// Small encoder-decoder mapping N x C x H x W images to N x out x H x W.
class GeneratorImpl : public torch::nn::Module {
 public:
  GeneratorImpl(int64_t in_channels, int64_t out_channels, int64_t width = 16);
  torch::Tensor forward(const torch::Tensor& x);
  int64_t in_channels() const { return in_; }
  int64_t out_channels() const { return out_; }
  int64_t width() const { return width_; }

 private:
  int64_t in_, out_, width_;
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(Generator);

struct InputAwareConfig {
  double lr_classifier = 0.01;
  double lr_generator = 0.01;
  double lr_mask = 0.01;
  std::vector<int64_t> milestones_classifier{100, 200, 300, 400};
  std::vector<int64_t> milestones_generator{200, 300, 400, 500};
  std::vector<int64_t> milestones_mask{10, 20};
  double gamma = 0.1;
  double lambda_div = 1.0;
  double lambda_norm = 400.0;
  double mask_density = 0.032;
  double cross_ratio = 1.0;
  double attack_ratio = 0.1;  // fraction of each batch relabeled to the target
  int64_t mask_epochs = 25;
  int64_t epochs = 100;  // joint epochs after the mask phase
  int64_t batch_size = 128;
  int64_t generator_width = 16;
  int64_t target_class = 0;
  uint64_t seed = 0;
  bool verbose = false;

  nlohmann::json to_json() const;
  static InputAwareConfig from_json(const nlohmann::json& j);
};

struct GeneratorBundle {
  Generator pattern_generator{nullptr};
  Generator mask_generator{nullptr};
  std::optional<ModelCheckpoint> classifier;  // set once training finishes

  /// Pattern in [0,1] for N x C x H x W images.
  torch::Tensor patterns(const torch::Tensor& images_nchw);
  /// Mask in [0,1], N x 1 x H x W.
  torch::Tensor masks(const torch::Tensor& images_nchw);
  /// x + (pattern(src) - x) * mask(src); src defaults to x itself.
  torch::Tensor apply_nchw(const torch::Tensor& images, const torch::Tensor& source = {});
  /// Inference-mode trigger on N x H x W x C images.
  torch::Tensor apply(const torch::Tensor& images_nhwc, const torch::Tensor& source_nhwc = {});
};

/// Sharp sigmoid used to turn mask-generator outputs into [0,1] masks.
torch::Tensor mask_threshold(const torch::Tensor& raw);

/// mean over pairs of ||a1 - a2|| / (||p1 - p2|| + eps); the term both
/// training phases minimise to keep generated triggers input-specific.
torch::Tensor diversity_loss(const torch::Tensor& inputs1, const torch::Tensor& inputs2, const torch::Tensor& out1,
                             const torch::Tensor& out2);

struct InputAwareStepLosses {
  double ce = 0.0;
  double diversity = 0.0;  // weighted by lambda_div
};

struct InputAwareResult {
  GeneratorBundle bundle;
  double attack_ratio = 0.0;
  double final_mask_density = 0.0;
  InputAwareStepLosses last_losses;
};

InputAwareResult train_input_aware(const LabeledDataset& data, Arch arch, const InputAwareConfig& cfg,
                                   const LabeledDataset* test = nullptr);

void save_generator(Generator& g, const std::filesystem::path& path);
Generator load_generator(const std::filesystem::path& path);
/// `<dir>/pattern_generator.pt`, `<dir>/mask_generator.pt`, `<dir>/classifier.ckpt`.
void save_bundle(GeneratorBundle& bundle, const std::filesystem::path& dir);
GeneratorBundle load_bundle(const std::filesystem::path& dir);

}  // namespace bdb::attacks
