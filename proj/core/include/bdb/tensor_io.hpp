#pragma once

#include <torch/torch.h>

#include <filesystem>

namespace bdb {

/// Single float32 tensor file ("BDBTNSR1", rank, shape, data).
void save_tensor(const torch::Tensor& t, const std::filesystem::path& path);
torch::Tensor load_tensor(const std::filesystem::path& path);

/// Binary PPM (P6) <-> H x W x 3 float image in [0,1].
torch::Tensor load_ppm(const std::filesystem::path& path);
void save_ppm(const torch::Tensor& image_hwc, const std::filesystem::path& path);

}  // namespace bdb
