#pragma once

#include "bdb/models.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace bdb {

struct LineageEntry {
  std::string stage;        // "clean-train", "attack:badnets", "ft", ...
  std::string config_hash;
  bool operator==(const LineageEntry&) const = default;
};

/// Immutable snapshot of a trained classifier together with its provenance.
/// Tensors are deep-copied on capture and never mutated afterwards.
class ModelCheckpoint {
 public:
  using NamedTensors = std::vector<std::pair<std::string, torch::Tensor>>;

  ModelCheckpoint(ModelSpec spec, NamedTensors params, std::vector<LineageEntry> lineage, uint64_t seed,
                  nlohmann::json metadata = nlohmann::json::object());

  static ModelCheckpoint capture(Classifier& model, std::vector<LineageEntry> lineage, uint64_t seed,
                                 nlohmann::json metadata = nlohmann::json::object());

  /// Fresh module in eval mode carrying these weights.
  Classifier instantiate() const;

  /// New checkpoint with `model`'s weights and one more lineage entry.
  ModelCheckpoint derive(Classifier& model, LineageEntry stage, nlohmann::json metadata_patch = {}) const;
  ModelCheckpoint with_metadata(nlohmann::json metadata_patch) const;

  const ModelSpec& spec() const { return spec_; }
  Arch arch() const { return spec_.arch; }
  const NamedTensors& params() const { return params_; }
  const std::vector<LineageEntry>& lineage() const { return lineage_; }
  uint64_t seed() const { return seed_; }
  const nlohmann::json& metadata() const { return metadata_; }

  /// Exact tensor equality over names, shapes, and values (lineage ignored).
  bool params_equal(const ModelCheckpoint& other) const;

 private:
  ModelSpec spec_;
  NamedTensors params_;
  std::vector<LineageEntry> lineage_;
  uint64_t seed_ = 0;
  nlohmann::json metadata_;
};

inline constexpr uint32_t kCheckpointFormatVersion = 2;

std::string encode_checkpoint(const ModelCheckpoint& ckpt);
ModelCheckpoint decode_checkpoint(std::string_view bytes, const std::string& context = "<memory>");

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);

}  // namespace bdb
