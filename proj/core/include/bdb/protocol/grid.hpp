#pragma once

#include "bdb/protocol/config.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace bdb::protocol {

struct GridSummary {
  int64_t cells = 0;
  int64_t completed = 0;  // ran to an ok record in this invocation
  int64_t skipped = 0;    // already complete in the record store
  int64_t failed = 0;
  int64_t attack_trainings = 0;  // attack builds executed in this invocation
  std::vector<nlohmann::json> failures;

  nlohmann::json to_json() const;
};

struct GridOptions {
  /// Binary that understands `cell --config <file> [--stage attack]`;
  /// needed for process fan-out. Defaults to the running executable.
  std::filesystem::path executable;
  bool force = false;
  std::function<void(const std::string&)> log;
};

/// Number of attack builds recorded for the cell of `cfg`.
int64_t attack_training_count(const ExperimentConfig& cfg);

/// Runs every cell of the grid. Each attack prefix is built (or loaded) once,
/// then its defense cells run; cells with a completed record are skipped.
/// Writes `<run_root>/grid_summary.json`.
GridSummary run_grid(const GridConfig& grid, const GridOptions& options = {});

/// Entry point of one process-isolated cell; returns the exit code.
int run_cell(const nlohmann::json& config, bool attack_stage_only, bool force);

}  // namespace bdb::protocol
