#pragma once

#include "bdb/dataset.hpp"

#include <json.hpp>

#include <cstdint>
#include <vector>

namespace bdb::attacks {

struct PoisonSchedule {
  std::vector<int64_t> poisoned_ids;  // sorted ascending
  double ratio = 0.0;
  bool label_consistent = false;
  int64_t target_class = 0;
  uint64_t seed = 0;
  int64_t source_size = 0;

  int64_t size() const { return static_cast<int64_t>(poisoned_ids.size()); }
  bool contains(int64_t id) const;

  nlohmann::json to_json() const;
  static PoisonSchedule from_json(const nlohmann::json& j);
};

/// floor(ratio * n), robust to representation error (0.29 * 100 -> 29).
int64_t poison_count(double ratio, int64_t n);

/// Draws floor(ratio * N) ids uniformly without replacement from the
/// eligible pool: target-class samples when `label_consistent`, all other
/// classes otherwise. Throws CapacityError when the pool is too small.
PoisonSchedule make_poison_schedule(const LabeledDataset& data, double ratio, int64_t target_class,
                                    bool label_consistent, uint64_t seed);

}  // namespace bdb::attacks
