#pragma once

#include "bdb/checkpoint.hpp"
#include "bdb/dataset.hpp"
#include "bdb/training.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <filesystem>

namespace bdb::attacks {

/// Fixed warping function. `control_grid` (k x k x 2) is normalised to unit
/// mean magnitude; `flow` (H x W x 2) is its bicubic upsampling scaled by
/// strength / H, in grid_sample's [-1, 1] coordinates.
struct WarpField {
  torch::Tensor control_grid;
  torch::Tensor flow;
  double rescale = 1.0;
  double strength = 0.5;
  uint64_t seed = 0;

  static WarpField random(ImageShape shape, int64_t k, double strength, uint64_t seed, double rescale = 1.0);
  static WarpField from_control_grid(const torch::Tensor& control_grid, ImageShape shape, double strength,
                                     double rescale = 1.0, uint64_t seed = 0);
  static WarpField identity(ImageShape shape);

  /// 1 x H x W x 2 sampling grid: identity + rescale * flow, clamped to [-1, 1].
  torch::Tensor grid() const;
  /// Largest displacement of any pixel, in pixels.
  double max_displacement_pixels() const;

  nlohmann::json to_json() const;
  static WarpField from_json(const nlohmann::json& j, ImageShape shape);
};

/// Bilinear, border-clamped resampling of N x H x W x C images (or one
/// H x W x C image) through the field. `noise` (N x H x W x 2) is added to
/// the grid before clamping when given.
torch::Tensor wanet_warp(const torch::Tensor& images, const WarpField& field, const torch::Tensor& noise = {});
/// Same on N x C x H x W batches.
torch::Tensor wanet_warp_nchw(const torch::Tensor& images, const WarpField& field, const torch::Tensor& noise = {});

struct WanetConfig {
  double poison_ratio = 0.1;  // fraction of each batch warped and relabeled
  double cross_ratio = 2.0;   // noise-mode samples per attack sample
  int64_t k = 4;
  double strength = 0.5;
  double grid_rescale = 1.0;
  int64_t target_class = 0;
  TrainConfig train = wanet_default_train();
  uint64_t seed = 0;

  static TrainConfig wanet_default_train();
  nlohmann::json to_json() const;
  static WanetConfig from_json(const nlohmann::json& j);
};

struct WanetResult {
  ModelCheckpoint model;
  WarpField field;
};

WanetResult train_wanet(const LabeledDataset& data, Arch arch, const WanetConfig& cfg,
                        const LabeledDataset* test = nullptr);

}  // namespace bdb::attacks
