#include "bdb/attacks/schedule.hpp"

#include "bdb/error.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace bdb::attacks {

bool PoisonSchedule::contains(int64_t id) const {
  return std::binary_search(poisoned_ids.begin(), poisoned_ids.end(), id);
}

nlohmann::json PoisonSchedule::to_json() const {
  return {{"poisoned_ids", poisoned_ids}, {"ratio", ratio},           {"label_consistent", label_consistent},
          {"target_class", target_class}, {"seed", seed},             {"source_size", source_size}};
}

PoisonSchedule PoisonSchedule::from_json(const nlohmann::json& j) {
  PoisonSchedule s;
  try {
    s.poisoned_ids = j.at("poisoned_ids").get<std::vector<int64_t>>();
    s.ratio = j.at("ratio").get<double>();
    s.label_consistent = j.at("label_consistent").get<bool>();
    s.target_class = j.at("target_class").get<int64_t>();
    s.seed = j.at("seed").get<uint64_t>();
    s.source_size = j.at("source_size").get<int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("malformed poison schedule: ") + e.what());
  }
  if (!std::is_sorted(s.poisoned_ids.begin(), s.poisoned_ids.end()))
    throw LoadError("poison schedule ids are not sorted");
  return s;
}

int64_t poison_count(double ratio, int64_t n) {
  return static_cast<int64_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
}

PoisonSchedule make_poison_schedule(const LabeledDataset& data, double ratio, int64_t target_class,
                                    bool label_consistent, uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ArgumentError("poisoning ratio must lie in [0, 1]");
  if (target_class < 0 || target_class >= data.n_classes())
    throw ArgumentError("target class " + std::to_string(target_class) + " out of range");
  const auto k = poison_count(ratio, data.size());

  std::vector<int64_t> pool;
  const auto* labels = data.labels().data_ptr<int64_t>();
  const auto* ids = data.ids().data_ptr<int64_t>();
  for (int64_t i = 0; i < data.size(); ++i)
    if ((labels[i] == target_class) == label_consistent) pool.push_back(ids[i]);
  std::sort(pool.begin(), pool.end());
  if (k > static_cast<int64_t>(pool.size())) {
    if (label_consistent)
      throw CapacityError("clean-label poisoning needs " + std::to_string(k) + " samples of class " +
                          std::to_string(target_class) + " but only " + std::to_string(pool.size()) +
                          " exist; the poisoned count must not exceed the target class size");
    throw CapacityError("poisoning ratio asks for " + std::to_string(k) + " samples but only " +
                        std::to_string(pool.size()) + " non-target samples exist");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(static_cast<size_t>(k));
  std::sort(pool.begin(), pool.end());
  return {std::move(pool), ratio, label_consistent, target_class, seed, data.size()};
}

}  // namespace bdb::attacks
