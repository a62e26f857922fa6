#pragma once

#include "bdb/models.hpp"
#include "bdb/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace bdb::protocol {

enum class Mode { Attack, Defense, Joint };
enum class Scale { Desk, Full };

std::string to_string(Mode m);
std::string to_string(Scale s);
Mode mode_from_string(const std::string& s);
Scale scale_from_string(const std::string& s);

/// badnets, blended, lc, sig, lf, ssba, inputaware, wanet.
const std::vector<std::string>& attack_names();
/// Poisoning ratios of the full-scale grid.
const std::vector<double>& full_scale_ratios();

/// Ratio as it appears in directory names: shortest decimal form.
std::string format_ratio(double ratio);

struct ExperimentConfig {
  Mode mode = Mode::Joint;
  Scale scale = Scale::Desk;
  std::string dataset = "desk-synthetic-cifar10-subset";
  std::filesystem::path data_root = "data";
  Arch arch = Arch::SmallCNN;
  std::string attack = "badnets";
  nlohmann::json attack_params = nlohmann::json::object();
  std::string defense = "none";
  nlohmann::json defense_params = nlohmann::json::object();
  double ratio = 0.1;
  int64_t target_class = 0;
  double reserve_ratio = 0.05;
  uint64_t seed = 0;
  nlohmann::json train = nlohmann::json::object();  // overrides of the attack training recipe
  std::filesystem::path run_root = "runs";
  bool verbose = false;

  nlohmann::json to_json() const;
  /// Unknown keys and out-of-range values raise ConfigError.
  static ExperimentConfig from_json(const nlohmann::json& j);
  void validate() const;

  /// Everything that decides the outcome (no paths, no verbosity).
  nlohmann::json identity() const;
  std::string config_hash() const;
  /// The part of the identity the attack artifacts depend on.
  nlohmann::json attack_identity() const;
  std::string attack_hash() const;

  /// <root>/<dataset>/<arch>/<attack>_<ratio>
  std::filesystem::path cell_dir() const;
  /// Cached attack artifacts shared by every defense of the cell.
  std::filesystem::path attack_dir() const;
  /// <cell>/<defense>
  std::filesystem::path run_dir() const;

  /// Training recipe of the backdoored model: desk = 30 epochs, full = 100,
  /// then `train` overrides.
  TrainConfig attack_train_config() const;
};

/// Reads a JSON config file; ConfigError when unreadable or malformed.
nlohmann::json read_config_file(const std::filesystem::path& path);

struct GridConfig {
  ExperimentConfig base;
  std::vector<std::string> datasets;
  std::vector<Arch> archs;
  std::vector<std::string> attacks;
  std::vector<std::string> defenses;
  std::vector<double> ratios;
  // Per-kind parameter blocks; a kind without an entry uses the base params.
  nlohmann::json attack_params_by_kind = nlohmann::json::object();
  nlohmann::json defense_params_by_kind = nlohmann::json::object();
  std::string fan_out = "process";  // process | inline
  int jobs = 1;

  nlohmann::json to_json() const;
  static GridConfig from_json(const nlohmann::json& j);
  /// One joint config per (dataset, arch, attack, ratio, defense), attacks
  /// outermost so cells sharing attack artifacts are adjacent.
  std::vector<ExperimentConfig> expand() const;
};

}  // namespace bdb::protocol
