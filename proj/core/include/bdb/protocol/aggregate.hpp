#pragma once

#include "bdb/protocol/record.hpp"

#include <json.hpp>

#include <filesystem>
#include <vector>

namespace bdb::protocol {

struct Aggregate {
  std::vector<nlohmann::json> rows;      // one per config hash, latest record wins
  std::vector<ResultRecord> records;     // the winning records, same order as rows
  std::vector<nlohmann::json> skipped;   // {path, reason} for malformed files
  std::vector<nlohmann::json> duplicates;  // {config_hash, kept, superseded[]}
  int64_t metric_law_violations = 0;
};

/// Column order of the table.
const std::vector<std::string>& aggregate_columns();

/// Scans every record below `root`. Read-only.
Aggregate aggregate_results(const std::filesystem::path& root);

/// Writes `<out>/results.csv` and `<out>/results.json`.
void write_aggregate(const Aggregate& agg, const std::filesystem::path& out_dir);

}  // namespace bdb::protocol
