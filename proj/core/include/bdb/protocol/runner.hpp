#pragma once

#include "bdb/attacks/poisoned_dataset.hpp"
#include "bdb/checkpoint.hpp"
#include "bdb/dataset.hpp"
#include "bdb/eval/metrics.hpp"
#include "bdb/protocol/config.hpp"
#include "bdb/protocol/record.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>

namespace bdb::protocol {

/// Clean data every stage derives deterministically from the config.
struct CleanData {
  LabeledDataset train;    // poisonable part (train minus reserve)
  LabeledDataset reserve;  // defender's clean reserve
  LabeledDataset test;
};
CleanData load_clean_data(const ExperimentConfig& cfg);

/// Backdoored model plus everything a defense or an evaluation needs.
struct AttackArtifacts {
  std::filesystem::path dir;
  ModelCheckpoint model;
  attacks::PoisonedDataset poisoned_train;
  attacks::PoisonedDataset poisoned_test;
  eval::MetricTriple metrics;
  nlohmann::json info;  // attack-specific description
  bool trained_now = false;
};

/// Loads the cached artifacts of the cell when their manifest carries this
/// config's attack hash; otherwise builds (and trains) them and writes the
/// manifest last.
AttackArtifacts prepare_attack(const ExperimentConfig& cfg, const CleanData& data);

/// Cached artifacts of the cell, if complete.
std::optional<AttackArtifacts> load_attack_artifacts(const ExperimentConfig& cfg);

/// Inputs handed to a defense; absent members are inputs the caller does not have.
struct DefenseArtifacts {
  std::optional<ModelCheckpoint> model;
  std::optional<attacks::PoisonedDataset> poisoned_train;
  std::optional<LabeledDataset> reserve;
};

struct DefenseOutcome {
  ModelCheckpoint model;
  nlohmann::json details = nlohmann::json::object();
};

/// Desk or full-scale defaults of a defense, as a parameter document.
nlohmann::json default_defense_params(const std::string& defense, Scale scale);

/// Throws RoutingError naming the required inputs when any is missing.
void check_routing(const std::string& defense, const DefenseArtifacts& inputs);

/// Runs `cfg.defense` (default params patched by `cfg.defense_params`).
/// Artifacts such as suspicion.json go to `out_dir`.
DefenseOutcome apply_defense(const ExperimentConfig& cfg, const DefenseArtifacts& inputs, const CleanData& data,
                             const std::filesystem::path& out_dir);

struct RunOptions {
  bool force = false;
  // Defense mode only: explicit inputs instead of the cell's attack artifacts.
  std::optional<std::filesystem::path> model_path;
  std::optional<std::filesystem::path> poisoned_train_dir;
  std::optional<std::filesystem::path> poisoned_test_dir;
};

struct RunOutcome {
  ResultRecord record;
  std::filesystem::path record_path;
  bool skipped = false;        // an equivalent completed record already existed
  bool attack_trained = false;
};

/// Runs one experiment in the config's mode and writes its record. Stage
/// failures are recorded (status "failed") rather than thrown; config
/// errors are thrown before anything is written.
RunOutcome run_experiment(const ExperimentConfig& cfg, const RunOptions& options = {});

}  // namespace bdb::protocol
