#include "bdb/protocol/config.hpp"

#include "bdb/defenses/common.hpp"
#include "bdb/error.hpp"
#include "bdb/hashing.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace bdb::protocol {

std::string to_string(Mode m) {
  switch (m) {
    case Mode::Attack: return "attack";
    case Mode::Defense: return "defense";
    case Mode::Joint: return "joint";
  }
  return "joint";
}

std::string to_string(Scale s) { return s == Scale::Desk ? "desk" : "full"; }

Mode mode_from_string(const std::string& s) {
  if (s == "attack") return Mode::Attack;
  if (s == "defense") return Mode::Defense;
  if (s == "joint") return Mode::Joint;
  throw ConfigError("unknown mode '" + s + "' (attack|defense|joint)");
}

Scale scale_from_string(const std::string& s) {
  if (s == "desk") return Scale::Desk;
  if (s == "full") return Scale::Full;
  throw ConfigError("unknown scale '" + s + "' (desk|full)");
}

const std::vector<std::string>& attack_names() {
  static const std::vector<std::string> names = {"badnets", "blended", "lc", "sig", "lf", "ssba", "inputaware", "wanet"};
  return names;
}

const std::vector<double>& full_scale_ratios() {
  static const std::vector<double> r = {0.001, 0.005, 0.01, 0.05, 0.10};
  return r;
}

std::string format_ratio(double ratio) {
  std::ostringstream os;
  os.precision(6);
  os << ratio;
  return os.str();
}

nlohmann::json ExperimentConfig::to_json() const {
  auto j = identity();
  j["mode"] = to_string(mode);
  j["data_root"] = data_root.string();
  j["run_root"] = run_root.string();
  j["verbose"] = verbose;
  return j;
}

nlohmann::json ExperimentConfig::identity() const {
  return {{"scale", to_string(scale)},   {"dataset", dataset},
          {"arch", bdb::to_string(arch)}, {"attack", attack},
          {"attack_params", attack_params}, {"defense", defense},
          {"defense_params", defense_params}, {"ratio", ratio},
          {"target_class", target_class}, {"reserve_ratio", reserve_ratio},
          {"seed", seed},                 {"train", train}};
}

std::string ExperimentConfig::config_hash() const { return bdb::config_hash(identity()); }

nlohmann::json ExperimentConfig::attack_identity() const {
  auto j = identity();
  j.erase("defense");
  j.erase("defense_params");
  return j;
}

std::string ExperimentConfig::attack_hash() const { return bdb::config_hash(attack_identity()); }

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  static const std::set<std::string> known = {"mode",   "scale",         "dataset",       "data_root", "arch",
                                              "attack", "attack_params", "defense",       "defense_params",
                                              "ratio",  "target_class",  "reserve_ratio", "seed",      "train",
                                              "run_root", "verbose"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");
  ExperimentConfig c;
  try {
    c.mode = mode_from_string(j.value("mode", to_string(c.mode)));
    c.scale = scale_from_string(j.value("scale", to_string(c.scale)));
    c.dataset = j.value("dataset", c.dataset);
    c.data_root = j.value("data_root", c.data_root.string());
    c.arch = arch_from_string(j.value("arch", bdb::to_string(c.arch)));
    c.attack = j.value("attack", c.attack);
    c.attack_params = j.value("attack_params", c.attack_params);
    c.defense = j.value("defense", c.defense);
    c.defense_params = j.value("defense_params", c.defense_params);
    c.ratio = j.value("ratio", c.ratio);
    c.target_class = j.value("target_class", c.target_class);
    c.reserve_ratio = j.value("reserve_ratio", c.reserve_ratio);
    c.seed = j.value("seed", c.seed);
    c.train = j.value("train", c.train);
    c.run_root = j.value("run_root", c.run_root.string());
    c.verbose = j.value("verbose", c.verbose);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config value: ") + e.what());
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  if (std::find(attack_names().begin(), attack_names().end(), attack) == attack_names().end())
    throw ConfigError("unknown attack '" + attack + "' (badnets|blended|lc|sig|lf|ssba|inputaware|wanet)");
  defenses::defense_kind_from_string(defense);
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("poisoning ratio must lie in (0, 1)");
  if (scale == Scale::Full) {
    const auto& allowed = full_scale_ratios();
    if (std::none_of(allowed.begin(), allowed.end(), [&](double r) { return std::abs(r - ratio) < 1e-12; }))
      throw ConfigError("full-scale ratio must be one of 0.001, 0.005, 0.01, 0.05, 0.1 (got " + format_ratio(ratio) +
                        ")");
  }
  if (!(reserve_ratio > 0.0 && reserve_ratio < 1.0)) throw ConfigError("reserve_ratio must lie in (0, 1)");
  if (target_class < 0) throw ConfigError("target_class must be non-negative");
  if (!attack_params.is_object() || !defense_params.is_object() || !train.is_object())
    throw ConfigError("attack_params, defense_params, and train must be objects");
  if (mode == Mode::Attack && defense != "none") throw ConfigError("attack mode runs no defense (defense must be 'none')");
  attack_train_config();
}

std::filesystem::path ExperimentConfig::cell_dir() const {
  return run_root / dataset / bdb::to_string(arch) / (attack + "_" + format_ratio(ratio));
}

std::filesystem::path ExperimentConfig::attack_dir() const { return cell_dir() / "attack"; }

std::filesystem::path ExperimentConfig::run_dir() const { return cell_dir() / defense; }

TrainConfig ExperimentConfig::attack_train_config() const {
  auto base = scale == Scale::Desk ? TrainConfig::desk() : TrainConfig{};
  base.seed = seed;
  auto j = base.to_json();
  j.merge_patch(train);
  return TrainConfig::from_json(j);
}

nlohmann::json read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed config file " + path.string() + ": " + e.what());
  }
}

nlohmann::json GridConfig::to_json() const {
  std::vector<std::string> arch_names;
  for (auto a : archs) arch_names.push_back(bdb::to_string(a));
  return {{"base", base.to_json()}, {"datasets", datasets}, {"archs", arch_names}, {"attacks", attacks},
          {"defenses", defenses}, {"ratios", ratios},
          {"attack_params_by_kind", attack_params_by_kind}, {"defense_params_by_kind", defense_params_by_kind},
          {"fan_out", fan_out}, {"jobs", jobs}};
}

GridConfig GridConfig::from_json(const nlohmann::json& j) {
  GridConfig g;
  auto base = j.value("base", nlohmann::json::object());
  base["mode"] = "joint";
  g.base = ExperimentConfig::from_json(base);
  try {
    g.datasets = j.value("datasets", std::vector<std::string>{g.base.dataset});
    for (const auto& a : j.value("archs", std::vector<std::string>{bdb::to_string(g.base.arch)}))
      g.archs.push_back(arch_from_string(a));
    g.attacks = j.value("attacks", std::vector<std::string>{g.base.attack});
    g.defenses = j.value("defenses", std::vector<std::string>{g.base.defense});
    g.ratios = j.value("ratios", std::vector<double>{g.base.ratio});
    g.attack_params_by_kind = j.value("attack_params_by_kind", g.attack_params_by_kind);
    g.defense_params_by_kind = j.value("defense_params_by_kind", g.defense_params_by_kind);
    g.fan_out = j.value("fan_out", g.fan_out);
    g.jobs = j.value("jobs", g.jobs);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed grid config: ") + e.what());
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  if (g.fan_out != "process" && g.fan_out != "inline") throw ConfigError("fan_out must be 'process' or 'inline'");
  if (g.jobs < 1) throw ConfigError("jobs must be at least 1");
  for (const auto& c : g.expand()) c.validate();
  return g;
}

std::vector<ExperimentConfig> GridConfig::expand() const {
  std::vector<ExperimentConfig> out;
  for (const auto& d : datasets)
    for (auto a : archs)
      for (const auto& atk : attacks)
        for (double r : ratios)
          for (const auto& def : defenses) {
            auto c = base;
            c.mode = Mode::Joint;
            c.dataset = d;
            c.arch = a;
            c.attack = atk;
            c.ratio = r;
            c.defense = def;
            if (attack_params_by_kind.contains(atk)) c.attack_params = attack_params_by_kind.at(atk);
            if (defense_params_by_kind.contains(def)) c.defense_params = defense_params_by_kind.at(def);
            out.push_back(std::move(c));
          }
  return out;
}

}  // namespace bdb::protocol
