#pragma once

#include "bdb/dataset.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <filesystem>
#include <memory>
#include <vector>

namespace bdb::attacks {

struct SsbaConfig {
  int64_t steps = 20000;  // 140000 at full scale
  int64_t batch_size = 32;
  double lr = 1e-3;
  int64_t message_length = 1;
  int64_t width = 32;
  double residual_scale = 0.05;  // max |residual| per pixel
  double image_weight = 10.0;    // weight of the reconstruction loss
  double min_bit_accuracy = 0.95;
  int64_t held_out = 500;
  uint64_t seed = 0;

  nlohmann::json to_json() const;
  static SsbaConfig from_json(const nlohmann::json& j);
};

/// Encoder/decoder pair: the encoder sees the image with the message bits
/// broadcast as extra channels and emits a bounded residual; the decoder
/// recovers the bits from the encoded image.
class SsbaCodecNetImpl : public torch::nn::Module {
 public:
  SsbaCodecNetImpl(int64_t channels, int64_t message_length, int64_t width, double residual_scale);

  /// N x C x H x W images, N x L bits in {0,1} -> encoded images in [0,1].
  torch::Tensor encode(const torch::Tensor& images, const torch::Tensor& bits);
  /// N x L bit logits.
  torch::Tensor decode(const torch::Tensor& images);

  int64_t message_length() const { return message_length_; }
  int64_t channels() const { return channels_; }
  int64_t width() const { return width_; }
  double residual_scale() const { return residual_scale_; }

 private:
  int64_t channels_, message_length_, width_;
  double residual_scale_;
  torch::nn::Sequential encoder_{nullptr};
  torch::nn::Sequential decoder_{nullptr};
};
TORCH_MODULE(SsbaCodecNet);

class SsbaCodec {
 public:
  explicit SsbaCodec(SsbaCodecNet net) : net_(std::move(net)) { net_->eval(); }
  SsbaCodecNet& net() { return net_; }
  int64_t message_length() const { return net_->message_length(); }

 private:
  SsbaCodecNet net_;
};

struct SsbaTrainResult {
  std::shared_ptr<SsbaCodec> codec;
  double held_out_bit_accuracy = 0.0;
};

/// Trains on random messages; the last `held_out` samples of `data` are
/// kept aside for the bit-accuracy check. Throws TrainingFailure when the
/// held-out bit accuracy is below `min_bit_accuracy`.
SsbaTrainResult train_ssba_encoder(const LabeledDataset& data, const SsbaConfig& cfg);

/// Encodes `bits` into N x H x W x C images (or a single H x W x C image).
torch::Tensor apply_ssba(const torch::Tensor& images, SsbaCodec& codec, const std::vector<int>& bits);
/// Fraction of bits recovered from encoded images (N x H x W x C).
double ssba_bit_accuracy(SsbaCodec& codec, const torch::Tensor& encoded, const torch::Tensor& bits);

void save_ssba_codec(SsbaCodec& codec, const std::filesystem::path& path);
std::shared_ptr<SsbaCodec> load_ssba_codec(const std::filesystem::path& path);

}  // namespace bdb::attacks
