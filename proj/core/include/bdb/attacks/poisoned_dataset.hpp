#pragma once

#include "bdb/attacks/schedule.hpp"
#include "bdb/attacks/triggers.hpp"
#include "bdb/dataset.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <unordered_set>

namespace bdb::attacks {

struct PoisonedDataset {
  LabeledDataset data;  // post-transform images, post-change labels
  PoisonSchedule schedule;
  std::map<int64_t, int64_t> original_labels;  // at least every poisoned id
  nlohmann::json trigger;                      // TriggerSpec::to_json() or a generator description

  std::unordered_set<int64_t> poisoned_set() const;
  /// Bool mask over storage order: true where the sample is poisoned.
  torch::Tensor poison_mask() const;
  /// Original labels in storage order (falls back to the current label).
  torch::Tensor original_label_tensor() const;
};

/// Transforms the scheduled samples with `transform` and, when `relabel`,
/// sets their label to the schedule's target. Everything else is copied
/// bit-for-bit.
PoisonedDataset apply_schedule(const LabeledDataset& data, const PoisonSchedule& schedule, const TriggerFn& transform,
                               bool relabel, nlohmann::json trigger_description);

/// Poisoned training set for a data-poisoning trigger. LC samples get the
/// surrogate's PGD perturbation before the patch.
PoisonedDataset build_poisoned_dataset(const LabeledDataset& data, const PoisonSchedule& schedule,
                                       const TriggerSpec& trigger);

/// Every test sample (target-class originals excluded unless
/// `exclude_target` is false) pushed through the trigger and labeled with
/// the target class; original labels are kept for robust accuracy.
PoisonedDataset build_poisoned_testset(const LabeledDataset& test, const TriggerFn& transform, int64_t target_class,
                                       nlohmann::json trigger_description = {}, bool exclude_target = true);
PoisonedDataset build_poisoned_testset(const LabeledDataset& test, const TriggerSpec& trigger,
                                       bool exclude_target = true);

/// `<dir>/images.bdbimg`, `<dir>/schedule.json`, `<dir>/original_labels.json`.
void save_poisoned_dataset(const PoisonedDataset& data, const std::filesystem::path& dir);
PoisonedDataset load_poisoned_dataset(const std::filesystem::path& dir);

}  // namespace bdb::attacks
