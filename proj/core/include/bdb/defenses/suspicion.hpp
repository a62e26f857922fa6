#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace bdb::defenses {

struct Confusion {
  int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  int64_t total() const { return tp + fp + fn + tn; }
  double precision() const { return tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0; }
  double recall() const { return tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0; }
};

struct SuspicionReport {
  std::string method;  // ac | spectral | abl | oracle
  nlohmann::json params = nlohmann::json::object();
  std::vector<int64_t> suspected_ids;  // sorted
  std::map<int64_t, double> scores;
  int64_t n_total = 0;
  std::optional<Confusion> confusion;
  std::vector<std::string> notes;

  /// Fills `confusion` against the true poison ids over `all_ids`.
  void score_against(const std::vector<int64_t>& all_ids, const std::vector<int64_t>& poisoned_ids);

  nlohmann::json to_json() const;
  static SuspicionReport from_json(const nlohmann::json& j);
};

void save_suspicion(const SuspicionReport& report, const std::filesystem::path& path);
SuspicionReport load_suspicion(const std::filesystem::path& path);

}  // namespace bdb::defenses
