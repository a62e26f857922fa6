#include "bdb/dataset.hpp"

#include "binary_io.hpp"
#include "bdb/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace bdb {

namespace fs = std::filesystem;

namespace {

constexpr char kArchiveMagic[8] = {'B', 'D', 'B', 'I', 'M', 'G', '0', '1'};
constexpr uint32_t kArchiveVersion = 1;

std::vector<int64_t> to_vector(const torch::Tensor& t) {
  auto c = t.contiguous().to(torch::kInt64);
  const auto* p = c.data_ptr<int64_t>();
  return {p, p + c.numel()};
}

}  // namespace

LabeledDataset::LabeledDataset(std::string name, torch::Tensor images, torch::Tensor labels, torch::Tensor ids,
                               int64_t n_classes)
    : name_(std::move(name)), n_classes_(n_classes) {
  if (images.dim() != 4) throw ArgumentError("dataset images must be N x H x W x C");
  const auto n = images.size(0);
  if (labels.dim() != 1 || labels.size(0) != n || ids.dim() != 1 || ids.size(0) != n)
    throw ArgumentError("dataset images/labels/ids length mismatch");
  if (n_classes <= 0) throw ArgumentError("dataset needs at least one class");
  images_ = images.to(torch::kFloat32).contiguous();
  labels_ = labels.to(torch::kInt64).contiguous();
  ids_ = ids.to(torch::kInt64).contiguous();
  shape_ = {images_.size(1), images_.size(2), images_.size(3)};
  if (n > 0) {
    const float lo = images_.min().item<float>();
    const float hi = images_.max().item<float>();
    if (!(lo >= 0.0f && hi <= 1.0f)) throw ArgumentError("dataset '" + name_ + "' has pixels outside [0,1]");
    if (labels_.min().item<int64_t>() < 0 || labels_.max().item<int64_t>() >= n_classes)
      throw ArgumentError("dataset '" + name_ + "' has labels outside [0, n_classes)");
  }
  auto index = std::make_shared<std::unordered_map<int64_t, int64_t>>();
  index->reserve(static_cast<size_t>(n));
  const auto* idp = ids_.data_ptr<int64_t>();
  for (int64_t i = 0; i < n; ++i) {
    if (!index->emplace(idp[i], i).second)
      throw ArgumentError("dataset '" + name_ + "' has duplicate id " + std::to_string(idp[i]));
  }
  index_ = std::move(index);
}

std::vector<int64_t> LabeledDataset::id_vector() const { return empty() ? std::vector<int64_t>{} : to_vector(ids_); }

Sample LabeledDataset::sample(int64_t index) const {
  if (index < 0 || index >= size()) throw ArgumentError("sample index out of range");
  return {ids_[index].item<int64_t>(), images_[index], labels_[index].item<int64_t>()};
}

std::optional<int64_t> LabeledDataset::index_of(int64_t id) const {
  if (!index_) return std::nullopt;
  auto it = index_->find(id);
  if (it == index_->end()) return std::nullopt;
  return it->second;
}

std::vector<int64_t> LabeledDataset::class_counts() const {
  std::vector<int64_t> counts(static_cast<size_t>(n_classes_), 0);
  if (empty()) return counts;
  const auto* lp = labels_.data_ptr<int64_t>();
  for (int64_t i = 0; i < size(); ++i) ++counts[static_cast<size_t>(lp[i])];
  return counts;
}

std::vector<int64_t> LabeledDataset::indices_of_class(int64_t label) const {
  std::vector<int64_t> out;
  if (empty()) return out;
  const auto* lp = labels_.data_ptr<int64_t>();
  for (int64_t i = 0; i < size(); ++i)
    if (lp[i] == label) out.push_back(i);
  return out;
}

LabeledDataset LabeledDataset::select(std::span<const int64_t> indices) const {
  auto idx = torch::tensor(std::vector<int64_t>(indices.begin(), indices.end()), torch::kInt64);
  if (indices.empty()) {
    return LabeledDataset(name_, torch::empty({0, shape_.height, shape_.width, shape_.channels}),
                          torch::empty({0}, torch::kInt64), torch::empty({0}, torch::kInt64), n_classes_);
  }
  return LabeledDataset(name_, images_.index_select(0, idx), labels_.index_select(0, idx),
                        ids_.index_select(0, idx), n_classes_);
}

LabeledDataset LabeledDataset::without_ids(const std::unordered_set<int64_t>& ids) const {
  std::vector<int64_t> keep;
  keep.reserve(static_cast<size_t>(size()));
  const auto* idp = empty() ? nullptr : ids_.data_ptr<int64_t>();
  for (int64_t i = 0; i < size(); ++i)
    if (!ids.contains(idp[i])) keep.push_back(i);
  return select(keep);
}

LabeledDataset LabeledDataset::renamed(std::string name) const {
  LabeledDataset copy = *this;
  copy.name_ = std::move(name);
  return copy;
}

LabeledDataset LabeledDataset::with_contents(torch::Tensor images, torch::Tensor labels) const {
  if (images.sizes() != images_.sizes()) throw ArgumentError("with_contents: image tensor shape changed");
  return LabeledDataset(name_, std::move(images), std::move(labels), ids_, n_classes_);
}

torch::Tensor LabeledDataset::batch_nchw(const torch::Tensor& indices) const {
  return images_.index_select(0, indices).permute({0, 3, 1, 2}).contiguous();
}

std::vector<int64_t> stratified_quota(std::span<const int64_t> class_counts, double ratio) {
  const int64_t total = std::accumulate(class_counts.begin(), class_counts.end(), int64_t{0});
  const auto target = static_cast<int64_t>(std::floor(ratio * static_cast<double>(total)));
  std::vector<int64_t> quota(class_counts.size());
  int64_t assigned = 0;
  for (size_t c = 0; c < class_counts.size(); ++c) {
    quota[c] = static_cast<int64_t>(std::floor(ratio * static_cast<double>(class_counts[c])));
    assigned += quota[c];
  }
  std::vector<size_t> order(class_counts.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return class_counts[a] > class_counts[b]; });
  for (size_t k = 0; assigned < target && k < order.size(); ++k) {
    const size_t c = order[k];
    if (quota[c] < class_counts[c]) {
      ++quota[c];
      ++assigned;
    }
  }
  return quota;
}

ReserveSplit split_clean_reserve(const LabeledDataset& train, double ratio, uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ArgumentError("reserve ratio must lie in (0, 1)");
  const auto counts = train.class_counts();
  const auto quota = stratified_quota(counts, ratio);
  std::vector<int64_t> reserve_idx;
  std::mt19937_64 rng(seed);
  for (int64_t c = 0; c < train.n_classes(); ++c) {
    if (counts[static_cast<size_t>(c)] == 0) continue;
    if (quota[static_cast<size_t>(c)] == 0)
      throw ArgumentError("reserve ratio " + std::to_string(ratio) + " leaves class " + std::to_string(c) +
                          " without a reserve sample");
    auto members = train.indices_of_class(c);
    std::shuffle(members.begin(), members.end(), rng);
    reserve_idx.insert(reserve_idx.end(), members.begin(), members.begin() + quota[static_cast<size_t>(c)]);
  }
  std::sort(reserve_idx.begin(), reserve_idx.end());
  std::vector<int64_t> train_idx;
  train_idx.reserve(static_cast<size_t>(train.size()) - reserve_idx.size());
  size_t r = 0;
  for (int64_t i = 0; i < train.size(); ++i) {
    if (r < reserve_idx.size() && reserve_idx[r] == i) {
      ++r;
      continue;
    }
    train_idx.push_back(i);
  }
  return {train.select(train_idx), train.select(reserve_idx).renamed(train.name() + "/reserve")};
}

void save_image_archive(const LabeledDataset& data, const fs::path& path) {
  detail::Writer w;
  w.put_bytes(kArchiveMagic, sizeof(kArchiveMagic));
  w.put<uint32_t>(kArchiveVersion);
  w.put_string(data.name());
  const auto shape = data.image_shape();
  w.put<int64_t>(data.size());
  w.put<int64_t>(shape.height);
  w.put<int64_t>(shape.width);
  w.put<int64_t>(shape.channels);
  w.put<int64_t>(data.n_classes());
  if (!data.empty()) {
    w.put_bytes(data.ids().data_ptr<int64_t>(), sizeof(int64_t) * static_cast<size_t>(data.size()));
    w.put_bytes(data.labels().data_ptr<int64_t>(), sizeof(int64_t) * static_cast<size_t>(data.size()));
    w.put_bytes(data.images().data_ptr<float>(), sizeof(float) * static_cast<size_t>(data.images().numel()));
  }
  detail::write_file_atomic(path, w.bytes());
}

LabeledDataset load_image_archive(const fs::path& path) {
  const auto bytes = detail::read_file(path);
  detail::Reader r(bytes, path.string());
  char magic[8];
  r.get_bytes(magic, sizeof(magic));
  if (!std::equal(std::begin(magic), std::end(magic), std::begin(kArchiveMagic)))
    throw LoadError("not an image archive: " + path.string());
  const auto version = r.get<uint32_t>();
  if (version != kArchiveVersion)
    throw MigrationError("image archive " + path.string() + " has version " + std::to_string(version) +
                         ", expected " + std::to_string(kArchiveVersion));
  auto name = r.get_string();
  const auto n = r.get<int64_t>();
  const auto h = r.get<int64_t>();
  const auto w = r.get<int64_t>();
  const auto c = r.get<int64_t>();
  const auto n_classes = r.get<int64_t>();
  if (n < 0 || h <= 0 || w <= 0 || c <= 0) throw LoadError("corrupt archive header: " + path.string());
  auto ids = torch::empty({n}, torch::kInt64);
  auto labels = torch::empty({n}, torch::kInt64);
  auto images = torch::empty({n, h, w, c}, torch::kFloat32);
  if (n > 0) {
    r.get_bytes(ids.data_ptr<int64_t>(), sizeof(int64_t) * static_cast<size_t>(n));
    r.get_bytes(labels.data_ptr<int64_t>(), sizeof(int64_t) * static_cast<size_t>(n));
    r.get_bytes(images.data_ptr<float>(), sizeof(float) * static_cast<size_t>(images.numel()));
  }
  if (r.remaining() != 0) throw LoadError("trailing bytes in archive: " + path.string());
  return LabeledDataset(std::move(name), images, labels, ids, n_classes);
}

LabeledDataset load_cifar_binary(const std::vector<fs::path>& files, const std::string& name, int64_t n_classes,
                                 int label_bytes, int64_t first_id) {
  constexpr int64_t kPixels = 32 * 32 * 3;
  const int64_t record = label_bytes + kPixels;
  std::vector<std::string> blobs;
  int64_t n = 0;
  for (const auto& f : files) {
    if (!fs::exists(f)) throw LoadError("missing dataset file: " + f.string());
    blobs.push_back(detail::read_file(f));
    if (blobs.back().size() % static_cast<size_t>(record) != 0)
      throw LoadError("corrupt CIFAR batch (size not a multiple of " + std::to_string(record) + "): " + f.string());
    n += static_cast<int64_t>(blobs.back().size()) / record;
  }
  auto raw = torch::empty({n, 3, 32, 32}, torch::kUInt8);
  auto labels = torch::empty({n}, torch::kInt64);
  auto* rp = raw.data_ptr<uint8_t>();
  auto* lp = labels.data_ptr<int64_t>();
  int64_t i = 0;
  for (const auto& blob : blobs) {
    for (size_t off = 0; off < blob.size(); off += static_cast<size_t>(record), ++i) {
      lp[i] = static_cast<uint8_t>(blob[off + static_cast<size_t>(label_bytes) - 1]);
      if (lp[i] >= n_classes) throw LoadError("label out of range in CIFAR batch for " + name);
      std::memcpy(rp + i * kPixels, blob.data() + off + label_bytes, kPixels);
    }
  }
  auto images = raw.permute({0, 2, 3, 1}).to(torch::kFloat32).div_(255.0f).contiguous();
  auto ids = torch::arange(first_id, first_id + n, torch::kInt64);
  return LabeledDataset(name, images, labels, ids, n_classes);
}

namespace {

DatasetSplits load_cifar10(const fs::path& root) {
  const auto dir = root / "cifar10" / "cifar-10-batches-bin";
  std::vector<fs::path> train_files;
  for (int b = 1; b <= 5; ++b) train_files.push_back(dir / ("data_batch_" + std::to_string(b) + ".bin"));
  return {load_cifar_binary(train_files, "cifar10", 10, 1), load_cifar_binary({dir / "test_batch.bin"}, "cifar10", 10, 1)};
}

DatasetSplits load_cifar100(const fs::path& root) {
  const auto dir = root / "cifar100" / "cifar-100-binary";
  return {load_cifar_binary({dir / "train.bin"}, "cifar100", 100, 2),
          load_cifar_binary({dir / "test.bin"}, "cifar100", 100, 2)};
}

DatasetSplits load_synthetic(uint64_t seed) {
  std::vector<int64_t> train_ids(50000), test_ids(10000);
  std::iota(train_ids.begin(), train_ids.end(), int64_t{0});
  std::iota(test_ids.begin(), test_ids.end(), int64_t{0});
  return {synthetic_dataset("train", train_ids, seed), synthetic_dataset("test", test_ids, seed)};
}

/// First floor(fraction * n_c) members of each class in id order.
std::vector<int64_t> balanced_subset_indices(const LabeledDataset& data, double fraction) {
  std::vector<int64_t> keep;
  const auto* idp = data.ids().data_ptr<int64_t>();
  for (int64_t c = 0; c < data.n_classes(); ++c) {
    auto members = data.indices_of_class(c);
    std::sort(members.begin(), members.end(), [&](int64_t a, int64_t b) { return idp[a] < idp[b]; });
    const auto k = static_cast<size_t>(std::floor(fraction * static_cast<double>(members.size())));
    keep.insert(keep.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(k));
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

}  // namespace

std::vector<std::string> supported_datasets() {
  return {"cifar10", "cifar100", "synthetic-cifar10", "desk-cifar10-subset", "desk-synthetic-cifar10-subset",
          "<name> with <root>/<name>/{train,test}.bdbimg"};
}

DatasetSplits load_dataset(const std::string& name, const fs::path& root, const LoadOptions& options) {
  constexpr std::string_view kDeskPrefix = "desk-";
  constexpr std::string_view kDeskSuffix = "-subset";
  if (name.starts_with(kDeskPrefix) && name.ends_with(kDeskSuffix) &&
      name.size() > kDeskPrefix.size() + kDeskSuffix.size()) {
    if (!(options.fraction > 0.0 && options.fraction <= 1.0)) throw ArgumentError("subset fraction must lie in (0, 1]");
    const auto base = name.substr(kDeskPrefix.size(), name.size() - kDeskPrefix.size() - kDeskSuffix.size());
    if (base == "synthetic-cifar10") {
      // Labels are id % 10, so the balanced prefix is simply ids [0, 10k).
      const auto per_class = static_cast<int64_t>(std::floor(options.fraction * 5000.0));
      std::vector<int64_t> train_ids(static_cast<size_t>(per_class * 10));
      std::iota(train_ids.begin(), train_ids.end(), int64_t{0});
      std::vector<int64_t> test_ids(10000);
      std::iota(test_ids.begin(), test_ids.end(), int64_t{0});
      return {synthetic_dataset("train", train_ids, options.synthetic_seed).renamed(name),
              synthetic_dataset("test", test_ids, options.synthetic_seed).renamed(name)};
    }
    auto full = load_dataset(base, root, options);
    return {full.train.select(balanced_subset_indices(full.train, options.fraction)).renamed(name),
            full.test.renamed(name)};
  }
  if (name == "cifar10") return load_cifar10(root);
  if (name == "cifar100") return load_cifar100(root);
  if (name == "synthetic-cifar10") return load_synthetic(options.synthetic_seed);
  const auto dir = root / name;
  if (!fs::exists(dir / "train.bdbimg") || !fs::exists(dir / "test.bdbimg")) {
    std::string known;
    for (const auto& s : supported_datasets()) known += "\n  " + s;
    throw LoadError("unsupported dataset '" + name + "': no archives at " + dir.string() + "; supported:" + known);
  }
  return {load_image_archive(dir / "train.bdbimg").renamed(name), load_image_archive(dir / "test.bdbimg").renamed(name)};
}

}  // namespace bdb
