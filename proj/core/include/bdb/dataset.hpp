#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace bdb {

struct ImageShape {
  int64_t height = 0;
  int64_t width = 0;
  int64_t channels = 0;

  int64_t numel() const { return height * width * channels; }
  bool operator==(const ImageShape&) const = default;
};

struct Sample {
  int64_t id = 0;
  torch::Tensor image;  // H x W x C, float32 in [0, 1]
  int64_t label = 0;
};

/// Immutable labeled image set. Pixels are stored as one N x H x W x C
/// float32 tensor; ids are unique and every label is below `n_classes`.
class LabeledDataset {
 public:
  LabeledDataset() = default;
  LabeledDataset(std::string name, torch::Tensor images, torch::Tensor labels, torch::Tensor ids,
                 int64_t n_classes);

  const std::string& name() const { return name_; }
  int64_t size() const { return ids_.defined() ? ids_.size(0) : 0; }
  bool empty() const { return size() == 0; }
  int64_t n_classes() const { return n_classes_; }
  ImageShape image_shape() const { return shape_; }

  const torch::Tensor& images() const { return images_; }
  const torch::Tensor& labels() const { return labels_; }
  const torch::Tensor& ids() const { return ids_; }
  std::vector<int64_t> id_vector() const;

  Sample sample(int64_t index) const;
  std::optional<int64_t> index_of(int64_t id) const;
  bool contains(int64_t id) const { return index_of(id).has_value(); }

  std::vector<int64_t> class_counts() const;
  /// Indices (not ids) of every sample carrying `label`, in storage order.
  std::vector<int64_t> indices_of_class(int64_t label) const;

  LabeledDataset select(std::span<const int64_t> indices) const;
  LabeledDataset without_ids(const std::unordered_set<int64_t>& ids) const;
  LabeledDataset renamed(std::string name) const;
  /// Same ids, new pixels/labels (used to build poisoned variants).
  LabeledDataset with_contents(torch::Tensor images, torch::Tensor labels) const;

  /// N x C x H x W batch for the given storage indices.
  torch::Tensor batch_nchw(const torch::Tensor& indices) const;

 private:
  std::string name_;
  torch::Tensor images_;
  torch::Tensor labels_;
  torch::Tensor ids_;
  int64_t n_classes_ = 0;
  ImageShape shape_;
  std::shared_ptr<const std::unordered_map<int64_t, int64_t>> index_;
};

struct DatasetSplits {
  LabeledDataset train;
  LabeledDataset test;
};

struct LoadOptions {
  /// Class-balanced fraction kept by the `desk-<base>-subset` loaders.
  double fraction = 0.2;
  uint64_t synthetic_seed = 20220603;
};

/// Supported names:
///   cifar10, cifar100           CIFAR binary batches under <root>/<name>/
///   synthetic-cifar10           procedural 10-class 32x32x3 set, no files
///   desk-<base>-subset          class-balanced `fraction` of <base>'s train split
///   anything else               <root>/<name>/{train,test}.bdbimg archives
DatasetSplits load_dataset(const std::string& name, const std::filesystem::path& root,
                           const LoadOptions& options = {});

std::vector<std::string> supported_datasets();

/// Class-stratified reserve of floor(ratio * N) samples. Each class gets
/// floor(ratio * n_c); the remainder goes one-per-class to the largest
/// classes (ties to the lower class index). A class left with a zero quota
/// is an error.
struct ReserveSplit {
  LabeledDataset train;
  LabeledDataset reserve;
};
ReserveSplit split_clean_reserve(const LabeledDataset& train, double ratio, uint64_t seed);

/// Per-class quotas used by split_clean_reserve, exposed for reporting.
std::vector<int64_t> stratified_quota(std::span<const int64_t> class_counts, double ratio);

// Binary image archive: "BDBIMG01", u32 version, name, n/h/w/c/n_classes,
// ids, labels, float32 pixels. Loading what was saved is bit-exact.
void save_image_archive(const LabeledDataset& data, const std::filesystem::path& path);
LabeledDataset load_image_archive(const std::filesystem::path& path);

/// Reads CIFAR-10/100 binary record files (label byte(s) + 3072 planar RGB bytes).
LabeledDataset load_cifar_binary(const std::vector<std::filesystem::path>& files, const std::string& name,
                                 int64_t n_classes, int label_bytes, int64_t first_id = 0);

/// Images of the procedural dataset for the given ids; label = id % 10.
torch::Tensor synthetic_images(const std::string& split, std::span<const int64_t> ids, uint64_t seed);
LabeledDataset synthetic_dataset(const std::string& split, std::span<const int64_t> ids, uint64_t seed);

}  // namespace bdb
