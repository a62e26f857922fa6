#include "bdb/attacks/poisoned_dataset.hpp"

#include "bdb/attacks/label_consistent.hpp"
#include "bdb/checkpoint.hpp"
#include "bdb/error.hpp"
#include "../binary_io.hpp"

#include <fstream>

namespace bdb::attacks {

std::unordered_set<int64_t> PoisonedDataset::poisoned_set() const {
  return {schedule.poisoned_ids.begin(), schedule.poisoned_ids.end()};
}

torch::Tensor PoisonedDataset::poison_mask() const {
  auto mask = torch::zeros({data.size()}, torch::kBool);
  for (auto id : schedule.poisoned_ids)
    if (auto idx = data.index_of(id)) mask[*idx] = true;
  return mask;
}

torch::Tensor PoisonedDataset::original_label_tensor() const {
  auto out = data.labels().clone();
  auto* p = out.data_ptr<int64_t>();
  const auto* ids = data.ids().data_ptr<int64_t>();
  for (int64_t i = 0; i < data.size(); ++i)
    if (auto it = original_labels.find(ids[i]); it != original_labels.end()) p[i] = it->second;
  return out;
}

namespace {

std::vector<int64_t> scheduled_indices(const LabeledDataset& data, const PoisonSchedule& schedule) {
  std::vector<int64_t> idx;
  idx.reserve(schedule.poisoned_ids.size());
  for (auto id : schedule.poisoned_ids) {
    auto i = data.index_of(id);
    if (!i) throw ArgumentError("poison schedule names id " + std::to_string(id) + " which is not in the dataset");
    idx.push_back(*i);
  }
  return idx;
}

}  // namespace

PoisonedDataset apply_schedule(const LabeledDataset& data, const PoisonSchedule& schedule, const TriggerFn& transform,
                               bool relabel, nlohmann::json trigger_description) {
  const auto idx = scheduled_indices(data, schedule);
  auto images = data.images().clone();
  auto labels = data.labels().clone();
  std::map<int64_t, int64_t> original;
  const auto* ids = data.ids().data_ptr<int64_t>();
  const auto* lab = data.labels().data_ptr<int64_t>();
  for (auto i : idx) original[ids[i]] = lab[i];
  constexpr int64_t kChunk = 512;
  for (size_t s = 0; s < idx.size(); s += kChunk) {
    const auto e = std::min(idx.size(), s + kChunk);
    auto chunk = torch::tensor(std::vector<int64_t>(idx.begin() + s, idx.begin() + e), torch::kInt64);
    auto transformed = transform(data.images().index_select(0, chunk)).to(torch::kFloat32).clamp(0.0, 1.0);
    images.index_copy_(0, chunk, transformed);
    if (relabel) labels.index_fill_(0, chunk, schedule.target_class);
  }
  return {data.with_contents(images, labels), schedule, std::move(original), std::move(trigger_description)};
}

PoisonedDataset build_poisoned_dataset(const LabeledDataset& data, const PoisonSchedule& schedule,
                                       const TriggerSpec& trigger) {
  trigger.validate(data.image_shape(), data.n_classes());
  if (trigger.clean_label() != schedule.label_consistent)
    throw ConfigError(to_string(trigger.kind) + " is a " + (trigger.clean_label() ? "clean" : "dirty") +
                      "-label attack but the schedule is " + (schedule.label_consistent ? "clean" : "dirty") +
                      "-label");
  if (trigger.target_class != schedule.target_class)
    throw ConfigError("trigger and schedule disagree on the target class");

  if (trigger.kind == TriggerKind::LC) {
    auto surrogate = trigger.surrogate->instantiate();
    const auto idx = scheduled_indices(data, schedule);
    auto idx_t = torch::tensor(idx, torch::kInt64);
    auto crafted = craft_lc_samples(surrogate, data.images().index_select(0, idx_t),
                                    data.labels().index_select(0, idx_t), trigger.pgd, trigger.patch_size,
                                    trigger.patch_value);
    // Hand the precomputed rows back through apply_schedule in id order.
    auto cursor = std::make_shared<int64_t>(0);
    TriggerFn take = [crafted, cursor](const torch::Tensor& x) {
      auto out = crafted.slice(0, *cursor, *cursor + x.size(0));
      *cursor += x.size(0);
      return out;
    };
    return apply_schedule(data, schedule, take, false, trigger.to_json());
  }
  return apply_schedule(data, schedule, make_trigger_fn(trigger), !trigger.clean_label(), trigger.to_json());
}

PoisonedDataset build_poisoned_testset(const LabeledDataset& test, const TriggerFn& transform, int64_t target_class,
                                       nlohmann::json trigger_description, bool exclude_target) {
  if (target_class < 0 || target_class >= test.n_classes()) throw ArgumentError("target class out of range");
  LabeledDataset kept = test;
  if (exclude_target) {
    std::vector<int64_t> keep;
    const auto* lab = test.labels().data_ptr<int64_t>();
    for (int64_t i = 0; i < test.size(); ++i)
      if (lab[i] != target_class) keep.push_back(i);
    kept = test.select(keep);
  }
  PoisonSchedule schedule;
  schedule.poisoned_ids = kept.id_vector();
  std::sort(schedule.poisoned_ids.begin(), schedule.poisoned_ids.end());
  schedule.ratio = 1.0;
  schedule.target_class = target_class;
  schedule.source_size = kept.size();
  auto out = apply_schedule(kept, schedule, transform, true, std::move(trigger_description));
  out.data = out.data.renamed(test.name() + "-poisoned");
  return out;
}

PoisonedDataset build_poisoned_testset(const LabeledDataset& test, const TriggerSpec& trigger, bool exclude_target) {
  trigger.validate(test.image_shape(), test.n_classes());
  return build_poisoned_testset(test, make_trigger_fn(trigger), trigger.target_class, trigger.to_json(),
                                exclude_target);
}

void save_poisoned_dataset(const PoisonedDataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_image_archive(data.data, dir / "images.bdbimg");
  auto sched = data.schedule.to_json();
  sched["trigger"] = data.trigger;
  detail::write_file_atomic(dir / "schedule.json", sched.dump(2) + "\n");
  nlohmann::json labels = nlohmann::json::object();
  for (const auto& [id, label] : data.original_labels) labels[std::to_string(id)] = label;
  detail::write_file_atomic(dir / "original_labels.json", labels.dump() + "\n");
}

PoisonedDataset load_poisoned_dataset(const std::filesystem::path& dir) {
  for (const char* f : {"images.bdbimg", "schedule.json", "original_labels.json"})
    if (!std::filesystem::exists(dir / f)) throw LoadError("poisoned dataset is missing " + (dir / f).string());
  PoisonedDataset out;
  out.data = load_image_archive(dir / "images.bdbimg");
  nlohmann::json sched, labels;
  try {
    sched = nlohmann::json::parse(detail::read_file(dir / "schedule.json"));
    labels = nlohmann::json::parse(detail::read_file(dir / "original_labels.json"));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("corrupt poisoned dataset metadata in " + dir.string() + ": " + e.what());
  }
  out.schedule = PoisonSchedule::from_json(sched);
  out.trigger = sched.value("trigger", nlohmann::json::object());
  for (const auto& [key, value] : labels.items()) out.original_labels[std::stoll(key)] = value.get<int64_t>();
  for (auto id : out.schedule.poisoned_ids)
    if (!out.data.contains(id) || !out.original_labels.count(id))
      throw LoadError("poisoned dataset in " + dir.string() + " is inconsistent with its schedule");
  return out;
}

}  // namespace bdb::attacks
