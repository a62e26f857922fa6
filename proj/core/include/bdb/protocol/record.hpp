#pragma once

#include "bdb/eval/metrics.hpp"
#include "bdb/protocol/config.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace bdb::protocol {

inline constexpr int kRecordSchemaVersion = 1;

/// One row of the evaluation grid. Written once, never modified.
struct ResultRecord {
  int schema_version = kRecordSchemaVersion;
  std::string status = "ok";  // ok | failed
  std::string error;
  int exit_code = 0;
  nlohmann::json config;  // ExperimentConfig::to_json()
  std::string config_hash;
  std::string attack_hash;
  std::optional<eval::MetricTriple> pre;   // backdoored model, no defense
  std::optional<eval::MetricTriple> post;  // after the defense (equals pre for "none")
  double runtime_seconds = 0.0;
  std::string framework_version = BDB_VERSION;
  std::string created_at;  // UTC, ISO 8601 with milliseconds
  nlohmann::json details = nlohmann::json::object();  // defense-specific output

  bool ok() const { return status == "ok"; }
  nlohmann::json to_json() const;
  static ResultRecord from_json(const nlohmann::json& j);
};

std::string utc_timestamp();

/// Writes `record.json` in `dir`. When one exists, writes the next free
/// `record-<n>.json` instead, so nothing is ever overwritten. Returns the path.
std::filesystem::path write_record(const ResultRecord& record, const std::filesystem::path& dir);

/// Every record file in `dir` (record.json, record-<n>.json), oldest first.
std::vector<std::filesystem::path> record_files(const std::filesystem::path& dir);

/// A successful record in `dir` whose config hash is `hash`, if any.
std::optional<ResultRecord> find_completed(const std::filesystem::path& dir, const std::string& hash);

/// All record files below `root`.
std::vector<std::filesystem::path> scan_records(const std::filesystem::path& root);

}  // namespace bdb::protocol
