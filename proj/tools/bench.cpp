#include "bdb/error.hpp"
#include "bdb/protocol/aggregate.hpp"
#include "bdb/protocol/config.hpp"
#include "bdb/protocol/grid.hpp"
#include "bdb/protocol/report.hpp"
#include "bdb/protocol/runner.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bdb;
using namespace bdb::protocol;

namespace {

// Flags mirror config keys; anything given on the command line replaces the
// value from --config.
struct ExperimentFlags {
  std::string config_file;
  std::optional<std::string> mode, scale, dataset, data_root, arch, attack, defense, run_root;
  std::optional<double> ratio, reserve_ratio;
  std::optional<int64_t> target_class;
  std::optional<uint64_t> seed;
  std::vector<std::string> attack_params, defense_params, train;
  bool verbose = false;
  bool force = false;

  void attach(CLI::App* app, bool with_defense) {
    app->add_option("--config", config_file, "JSON experiment config")->check(CLI::ExistingFile);
    app->add_option("--mode", mode, "attack | defense | joint");
    app->add_option("--scale", scale, "desk | full");
    app->add_option("--dataset", dataset);
    app->add_option("--data-root", data_root);
    app->add_option("--arch", arch);
    app->add_option("--attack", attack);
    app->add_option("--ratio", ratio, "poisoning ratio");
    app->add_option("--target-class", target_class);
    app->add_option("--reserve-ratio", reserve_ratio);
    app->add_option("--seed", seed);
    app->add_option("--run-root", run_root);
    app->add_option("--attack-param", attack_params, "key=value (value parsed as JSON when possible)");
    app->add_option("--train", train, "key=value override of the training recipe");
    if (with_defense) {
      app->add_option("--defense", defense);
      app->add_option("--defense-param", defense_params, "key=value (value parsed as JSON when possible)");
    }
    app->add_flag("--verbose,-v", verbose);
    app->add_flag("--force", force, "rerun even if a completed record exists");
  }

  static void put_pairs(json& target, const std::vector<std::string>& pairs) {
    if (!target.is_object()) target = json::object();
    for (const auto& p : pairs) {
      const auto eq = p.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("expected key=value, got '" + p + "'");
      const auto key = p.substr(0, eq), text = p.substr(eq + 1);
      json value = json::parse(text, nullptr, false);
      target[key] = value.is_discarded() ? json(text) : value;
    }
  }

  json document(const std::string& default_mode) const {
    json j = json::object();
    if (!config_file.empty()) j = read_config_file(config_file);
    else j["mode"] = default_mode;
    auto set = [&](const char* key, const auto& v) {
      if (v) j[key] = *v;
    };
    set("mode", mode);
    set("scale", scale);
    set("dataset", dataset);
    set("data_root", data_root);
    set("arch", arch);
    set("attack", attack);
    set("defense", defense);
    set("run_root", run_root);
    set("ratio", ratio);
    set("reserve_ratio", reserve_ratio);
    set("target_class", target_class);
    set("seed", seed);
    if (!attack_params.empty()) put_pairs(j["attack_params"], attack_params);
    if (!defense_params.empty()) put_pairs(j["defense_params"], defense_params);
    if (!train.empty()) put_pairs(j["train"], train);
    if (verbose) j["verbose"] = true;
    return j;
  }
};

int report_outcome(const RunOutcome& out) {
  json summary = {{"status", out.record.status},
                  {"record", out.record_path.string()},
                  {"skipped", out.skipped},
                  {"config_hash", out.record.config_hash}};
  if (out.record.pre) summary["pre"] = out.record.pre->to_json();
  if (out.record.post) summary["post"] = out.record.post->to_json();
  if (!out.record.ok()) summary["error"] = out.record.error;
  std::cout << summary.dump(2) << "\n";
  if (out.record.ok()) return 0;
  return out.record.exit_code ? out.record.exit_code : 3;
}

int run_single(const ExperimentFlags& flags, const std::string& default_mode, const RunOptions& base_opts) {
  auto cfg = ExperimentConfig::from_json(flags.document(default_mode));
  auto opts = base_opts;
  opts.force = flags.force;
  return report_outcome(run_experiment(cfg, opts));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Backdoor attack and defense benchmark"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(BDB_VERSION));

  ExperimentFlags attack_flags, defend_flags;
  auto* attack_cmd = app.add_subcommand("attack", "train a backdoored model and record its metrics");
  attack_flags.attach(attack_cmd, false);

  auto* defend_cmd = app.add_subcommand("defend", "apply a defense to an attack cell and record the outcome");
  defend_flags.attach(defend_cmd, true);
  std::string model_path, poisoned_train_dir, poisoned_test_dir;
  defend_cmd->add_option("--model", model_path, "backdoored checkpoint instead of the cell's cached one");
  defend_cmd->add_option("--poisoned-train", poisoned_train_dir, "saved poisoned training set directory");
  defend_cmd->add_option("--poisoned-test", poisoned_test_dir, "saved poisoned test set directory");

  auto* grid_cmd = app.add_subcommand("grid", "run every cell of a grid config");
  std::string grid_file, grid_root, fan_out;
  int jobs = 0;
  bool grid_force = false, grid_quiet = false;
  grid_cmd->add_option("--config", grid_file, "JSON grid config")->required()->check(CLI::ExistingFile);
  grid_cmd->add_option("--run-root", grid_root);
  grid_cmd->add_option("--fan-out", fan_out, "process | inline");
  grid_cmd->add_option("--jobs", jobs, "concurrent cell processes");
  grid_cmd->add_flag("--force", grid_force);
  grid_cmd->add_flag("--quiet,-q", grid_quiet);

  auto* agg_cmd = app.add_subcommand("aggregate", "collect every record below a root into results.csv / results.json");
  std::string agg_root = "runs", agg_out;
  agg_cmd->add_option("--root", agg_root);
  agg_cmd->add_option("--out", agg_out, "output directory (defaults to the root)");

  auto* report_cmd = app.add_subcommand("report", "render scatter and ratio plots from the records");
  std::string report_root = "runs", report_out;
  report_cmd->add_option("--root", report_root);
  report_cmd->add_option("--out", report_out, "output directory (defaults to <root>/report)");

  auto* cell_cmd = app.add_subcommand("cell", "one grid cell (used by process fan-out)");
  cell_cmd->group("");
  std::string cell_file, cell_stage;
  bool cell_force = false;
  cell_cmd->add_option("--config", cell_file)->required()->check(CLI::ExistingFile);
  cell_cmd->add_option("--stage", cell_stage)->check(CLI::IsMember({"attack"}));
  cell_cmd->add_flag("--force", cell_force);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*attack_cmd) return run_single(attack_flags, "attack", {});
    if (*defend_cmd) {
      RunOptions opts;
      if (!model_path.empty()) opts.model_path = model_path;
      if (!poisoned_train_dir.empty()) opts.poisoned_train_dir = poisoned_train_dir;
      if (!poisoned_test_dir.empty()) opts.poisoned_test_dir = poisoned_test_dir;
      return run_single(defend_flags, "defense", opts);
    }
    if (*grid_cmd) {
      auto doc = read_config_file(grid_file);
      if (!grid_root.empty()) doc["base"]["run_root"] = grid_root;
      if (!fan_out.empty()) doc["fan_out"] = fan_out;
      if (jobs > 0) doc["jobs"] = jobs;
      auto grid = GridConfig::from_json(doc);
      GridOptions opts;
      opts.force = grid_force;
      if (!grid_quiet) opts.log = [](const std::string& m) { std::cerr << m << "\n"; };
      const auto summary = run_grid(grid, opts);
      std::cout << summary.to_json().dump(2) << "\n";
      return summary.failed ? 3 : 0;
    }
    if (*agg_cmd) {
      const auto agg = aggregate_results(agg_root);
      const fs::path out = agg_out.empty() ? fs::path(agg_root) : fs::path(agg_out);
      write_aggregate(agg, out);
      std::cout << "rows " << agg.rows.size() << ", skipped " << agg.skipped.size() << ", duplicate hashes "
                << agg.duplicates.size() << " -> " << (out / "results.csv").string() << "\n";
      return agg.metric_law_violations ? 3 : 0;
    }
    if (*report_cmd) {
      const auto agg = aggregate_results(report_root);
      const fs::path out = report_out.empty() ? fs::path(report_root) / "report" : fs::path(report_out);
      for (const auto& p : render_report(agg.records, out)) std::cout << p.string() << "\n";
      return 0;
    }
    if (*cell_cmd) {
      return run_cell(read_config_file(cell_file), cell_stage == "attack", cell_force);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
