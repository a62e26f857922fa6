#pragma once

#include "bdb/dataset.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace bdb {
class ModelCheckpoint;
}

namespace bdb::attacks {

class SsbaCodec;

enum class TriggerKind { BadNets, Blended, LC, SIG, LF, SSBA };

std::string to_string(TriggerKind kind);
TriggerKind trigger_kind_from_string(const std::string& name);
/// LC and SIG poison target-class samples without relabeling.
bool is_clean_label(TriggerKind kind);

// Trigger functions accept a single H x W x C image or an N x H x W x C
// batch and return a new tensor; the input is never modified.

/// Square patch of `value` flush with the bottom-right corner.
torch::Tensor apply_badnets(const torch::Tensor& image, int64_t patch = 3, float value = 1.0f);
/// (1 - alpha) * image + alpha * pattern, clipped. `pattern` must already be
/// H x W x C (see resize_pattern).
torch::Tensor apply_blended(const torch::Tensor& image, const torch::Tensor& pattern, double alpha);
/// image + delta * sin(2 pi j f / W) along columns j (rows i when
/// `along_columns` is false), clipped.
torch::Tensor apply_sig(const torch::Tensor& image, double delta, int64_t freq, bool along_columns = true);
/// image + trigger, clipped. `trigger` is H x W x C.
torch::Tensor apply_additive(const torch::Tensor& image, const torch::Tensor& trigger);

/// Bilinear resize of an h x w x c pattern to `shape` (channels broadcast
/// from 1 to 3 when needed).
torch::Tensor resize_pattern(const torch::Tensor& pattern, ImageShape shape);
/// Deterministic full-image texture used when no pattern file is given.
torch::Tensor procedural_blend_pattern(ImageShape shape, uint64_t seed = 0);

/// Batch transform N x H x W x C -> N x H x W x C.
using TriggerFn = std::function<torch::Tensor(const torch::Tensor&)>;

struct PgdConfig {
  int64_t steps = 100;
  double step_size = 1.5 / 255.0;
  double eps = 8.0 / 255.0;
};

/// Trigger description. Scalars live here in the [0,1] pixel domain; the
/// tensors and models some kinds need are attached as artifacts.
struct TriggerSpec {
  TriggerKind kind = TriggerKind::BadNets;
  int64_t target_class = 0;

  int64_t patch_size = 3;  // badnets, lc
  float patch_value = 1.0f;

  double alpha = 0.2;  // blended
  std::string pattern_file;
  uint64_t pattern_seed = 0;
  torch::Tensor pattern;  // H x W x C

  double sig_delta = 40.0 / 255.0;
  int64_t sig_freq = 6;
  bool sig_along_columns = true;

  PgdConfig pgd;  // lc
  std::shared_ptr<const ModelCheckpoint> surrogate;

  torch::Tensor lf_trigger;  // H x W x C additive

  std::vector<int> message_bits{1};  // ssba
  std::shared_ptr<SsbaCodec> ssba;

  bool clean_label() const { return is_clean_label(kind); }

  /// Scalar parameters, [0,1] units.
  nlohmann::json to_json() const;
  /// Parses a config document. `delta`, `eps`, and `step_size` are given in
  /// 0-255 units and divided by 255 here; unknown keys are rejected.
  static TriggerSpec from_config(const nlohmann::json& j);

  /// Checks that the artifacts `kind` needs are attached and shaped for `shape`.
  void validate(ImageShape shape, int64_t n_classes) const;
};

/// Test-time transform for the spec (LC poisons with PGD at training time
/// but is triggered by the patch alone).
TriggerFn make_trigger_fn(const TriggerSpec& spec);

}  // namespace bdb::attacks
