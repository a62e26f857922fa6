// Desk-scale acceptance run: one PASS/FAIL line per criterion.

#include "../support/checks.hpp"

#include "bdb/defenses/detection.hpp"
#include "bdb/eval/metrics.hpp"
#include "bdb/protocol/aggregate.hpp"
#include "bdb/protocol/config.hpp"
#include "bdb/protocol/grid.hpp"
#include "bdb/protocol/record.hpp"
#include "bdb/protocol/runner.hpp"
#include "bdb/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <spawn.h>
#include <sstream>
#include <fcntl.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <thread>

extern char** environ;

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bdb;
using namespace bdb::protocol;

namespace {

struct Line {
  int id;
  std::string name;
  bool pass;
  std::string detail;
};

std::vector<Line> g_lines;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  g_lines.push_back({id, name, pass, detail});
  std::cout << (pass ? "PASS" : "FAIL") << "  [" << id << "] " << name << ": " << detail << std::endl;
}

std::string num(double v, int precision = 2) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(precision);
  os << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ExperimentConfig desk_config(const fs::path& root, const std::string& attack, const std::string& defense) {
  ExperimentConfig c;
  c.mode = defense == "none" ? Mode::Attack : Mode::Joint;
  c.scale = Scale::Desk;
  c.attack = attack;
  c.defense = defense;
  c.ratio = 0.1;
  c.target_class = 0;
  c.seed = 0;
  c.run_root = root;
  return c;
}

// Runs one experiment and returns its record; a failed stage is reported
// by the caller through the record's status.
ResultRecord run(const ExperimentConfig& cfg) {
  auto out = run_experiment(cfg);
  if (!out.record.ok()) std::cerr << "stage failed: " << out.record.error << "\n";
  return out.record;
}

std::string metrics_text(const std::optional<eval::MetricTriple>& m) {
  if (!m) return "no metrics";
  return "C-Acc " + num(m->c_acc) + ", ASR " + num(m->asr) + ", R-Acc " + num(m->r_acc);
}

pid_t spawn_group(const std::vector<std::string>& args, const fs::path& log) {
  std::vector<char*> argv;
  for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);
  posix_spawnattr_t attr;
  posix_spawnattr_init(&attr);
  posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETPGROUP);
  posix_spawnattr_setpgroup(&attr, 0);
  posix_spawn_file_actions_t fa;
  posix_spawn_file_actions_init(&fa);
  posix_spawn_file_actions_addopen(&fa, 1, log.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  posix_spawn_file_actions_addopen(&fa, 2, log.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  pid_t pid = 0;
  const int rc = posix_spawn(&pid, argv[0], &fa, &attr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&fa);
  posix_spawnattr_destroy(&attr);
  if (rc != 0) throw std::runtime_error("cannot start " + args[0]);
  return pid;
}

int wait_exit(pid_t pid) {
  int status = 0;
  waitpid(pid, &status, 0);
  return WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
}

int64_t count_trainings(const fs::path& root) {
  int64_t n = 0;
  if (!fs::exists(root)) return 0;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.path().filename() != "trainings.log") continue;
    std::ifstream in(e.path());
    std::string line;
    while (std::getline(in, line)) n += !line.empty();
  }
  return n;
}

void criterion_protocol(const fs::path& work, const fs::path& bench) {
  const auto root = work / "grid";
  json base = desk_config(root, "badnets", "none").to_json();
  base["mode"] = "joint";
  base["train"] = {{"epochs", 3}};  // the protocol, not attack strength, is under test here
  json grid = {{"base", base},
               {"attacks", {"badnets", "blended"}},
               {"defenses", {"ft", "fp", "spectral"}},
               {"ratios", {0.1}},
               {"defense_params_by_kind", {{"ft", {{"epochs", 2}}}, {"fp", {{"epochs", 2}}}}},
               {"fan_out", "process"}};
  fs::create_directories(root);
  const auto grid_file = work / "grid.json";
  std::ofstream(grid_file) << grid.dump(2);
  const auto log = work / "grid.log";
  const std::vector<std::string> cmd = {bench.string(), "grid", "--config", grid_file.string()};

  // First pass: kill the whole process group once a record exists.
  const auto pid = spawn_group(cmd, log);
  bool killed = false;
  for (int i = 0; i < 7200; ++i) {
    int status = 0;
    if (waitpid(pid, &status, WNOHANG) == pid) break;
    if (!scan_records(root).empty()) {
      ::kill(-pid, SIGKILL);
      wait_exit(pid);
      killed = true;
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(250));
  }
  const auto records_at_kill = scan_records(root).size();
  const auto rc = wait_exit(spawn_group(cmd, log));
  json summary;
  std::ifstream(root / "grid_summary.json") >> summary;

  const auto records = scan_records(root);
  int64_t ok = 0, immutable = 0, hash_ok = 0;
  for (const auto& p : records) {
    struct stat st {};
    if (::stat(p.c_str(), &st) == 0 && (st.st_mode & 0222) == 0) ++immutable;
    auto r = ResultRecord::from_json(json::parse(std::ifstream(p)));
    ok += r.ok();
    hash_ok += ExperimentConfig::from_json(r.config).config_hash() == r.config_hash;
  }
  const auto trainings = count_trainings(root);
  const int agg_rc = wait_exit(spawn_group({bench.string(), "aggregate", "--root", root.string()}, log));
  const int rep_rc = wait_exit(spawn_group({bench.string(), "report", "--root", root.string()}, log));
  int64_t csv_rows = -1;
  {
    std::ifstream in(root / "results.csv");
    std::string line;
    while (std::getline(in, line)) ++csv_rows;
  }
  const auto rep = root / "report";
  const bool figures = fs::exists(rep / "cacc_vs_asr.svg") && fs::exists(rep / "racc_vs_asr.svg") &&
                       fs::exists(rep / "ratio_ft.svg") && fs::exists(rep / "ratio_fp.svg") &&
                       fs::exists(rep / "ratio_spectral.svg");
  const int64_t skipped = summary.value("skipped", 0);
  const bool pass = killed && rc == 0 && records.size() == 6 && ok == 6 && immutable == 6 && hash_ok == 6 &&
                    trainings == 2 && skipped >= static_cast<int64_t>(records_at_kill) && agg_rc == 0 &&
                    rep_rc == 0 && csv_rows == 6 && figures;
  report(9, "protocol integrity", pass,
         std::to_string(records.size()) + " records (" + std::to_string(ok) + " ok, " + std::to_string(immutable) +
             " read-only, " + std::to_string(hash_ok) + " hash-reproducible), " + std::to_string(trainings) +
             " attack trainings, killed after " + std::to_string(records_at_kill) + " record(s), resume skipped " +
             std::to_string(skipped) + ", table rows " + std::to_string(csv_rows) + ", figures " +
             (figures ? "rendered" : "missing"));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk acceptance run"};
  fs::path work = "acceptance_work", bench;
  bool reuse = false;
  app.add_option("--work", work, "scratch directory");
  app.add_option("--bench", bench, "path of the bench executable")->required();
  app.add_flag("--reuse", reuse, "keep cached attack artifacts from a previous run");
  CLI11_PARSE(app, argc, argv);

  if (!reuse) fs::remove_all(work);
  fs::create_directories(work);
  const auto runs = work / "runs";
  const auto t_all = std::chrono::steady_clock::now();

  // 8: trigger algebra, no training.
  {
    const auto t0 = std::chrono::steady_clock::now();
    const auto v = testing::check_trigger_algebra();
    const double dt = seconds_since(t0);
    report(8, "trigger algebra", v.pass && dt < 60.0, v.detail + ", " + num(dt, 1) + " s");
  }

  // 1: BadNets potency.
  const auto badnets_cfg = desk_config(runs, "badnets", "none");
  const auto t_bad = std::chrono::steady_clock::now();
  const auto badnets = run(badnets_cfg);
  const double bad_seconds = seconds_since(t_bad);
  {
    const bool pass = badnets.ok() && badnets.pre && badnets.pre->asr >= 85.0 && badnets.pre->c_acc >= 70.0 &&
                      bad_seconds < 900.0;
    report(1, "BadNets potency (desk)", pass,
           metrics_text(badnets.pre) + ", " + num(bad_seconds, 0) + " s (gate: ASR >= 85, C-Acc >= 70, < 900 s)");
  }

  // 10: determinism, a second independent run with the same seed.
  {
    auto again_cfg = badnets_cfg;
    again_cfg.run_root = work / "runs_repeat";
    const auto again = run(again_cfg);
    auto first = load_attack_artifacts(badnets_cfg);
    auto second = load_attack_artifacts(again_cfg);
    const bool ids_equal =
        first && second && first->poisoned_train.schedule.poisoned_ids == second->poisoned_train.schedule.poisoned_ids;
    const bool hash_equal = badnets.config_hash == again.config_hash && !badnets.config_hash.empty();
    double worst = 1e9;
    if (badnets.pre && again.pre)
      worst = std::max({std::abs(badnets.pre->c_acc - again.pre->c_acc), std::abs(badnets.pre->asr - again.pre->asr),
                        std::abs(badnets.pre->r_acc - again.pre->r_acc)});
    report(10, "determinism", ids_equal && hash_equal && worst <= 0.5,
           std::string("poison ids ") + (ids_equal ? "identical" : "differ") + ", config hash " +
               (hash_equal ? "identical" : "differs") + ", largest metric gap " + num(worst) + " (gate 0.5)");
  }

  // 2: FT selectivity.
  {
    const auto ft_bad = run(desk_config(runs, "badnets", "ft"));
    const auto ft_blend = run(desk_config(runs, "blended", "ft"));
    const double a = ft_bad.post ? ft_bad.post->asr : 100.0;
    const double b = ft_blend.post ? ft_blend.post->asr : 0.0;
    const bool pass = ft_bad.ok() && ft_blend.ok() && a <= 10.0 && b >= 50.0 && b - a >= 30.0;
    report(2, "FT selectivity", pass,
           "BadNets|FT ASR " + num(a) + " (gate <= 10), Blended|FT ASR " + num(b) + " (gate >= 50), gap " +
               num(b - a) + " (gate >= 30); Blended before FT " + metrics_text(ft_blend.pre));
  }

  // 3: Neural Cleanse end to end.
  {
    const auto nc = run(desk_config(runs, "badnets", "nc"));
    double ai = 0.0;
    bool flagged = false;
    if (nc.ok() && nc.details.contains("defense")) {
      const auto& d = nc.details["defense"];
      ai = d.at("anomaly_index").at(0).get<double>();
      for (const auto& f : d.at("flagged")) flagged |= f.get<int64_t>() == 0;
    }
    const double asr = nc.post ? nc.post->asr : 100.0;
    const double gap = nc.post ? std::abs(nc.post->r_acc - nc.post->c_acc) : 100.0;
    report(3, "Neural Cleanse", nc.ok() && flagged && ai > 2.0 && asr <= 10.0 && gap <= 10.0,
           "target anomaly index " + num(ai) + (flagged ? " (flagged)" : " (not flagged)") + ", post " +
               metrics_text(nc.post) + ", |R-Acc - C-Acc| " + num(gap));
  }

  // 4: ABL.
  {
    const auto abl = run(desk_config(runs, "badnets", "abl"));
    double precision = 0.0;
    int64_t isolated = 0;
    if (abl.ok() && abl.details.contains("defense")) {
      const auto& d = abl.details["defense"];
      precision = d.at("confusion").at("precision").get<double>();
      isolated = d.at("suspected").get<int64_t>();
    }
    const double asr = abl.post ? abl.post->asr : 100.0;
    report(4, "ABL pipeline", abl.ok() && precision >= 0.8 && asr <= 10.0,
           "isolation precision " + num(precision, 3) + " on " + std::to_string(isolated) +
               " isolated (gate 0.8), post " + metrics_text(abl.post) + " (gate ASR <= 10)");
  }

  // 6: detector oracles.
  {
    const auto spectral = testing::check_spectral_fixture();
    const auto ac = testing::check_ac_fixture();
    double oracle_asr = 100.0;
    std::string oracle_text = "attack artifacts unavailable";
    if (auto art = load_attack_artifacts(badnets_cfg)) {
      auto data = load_clean_data(badnets_cfg);
      auto model = defenses::retrain_without(art->poisoned_train.data, art->poisoned_train.schedule.poisoned_ids,
                                             badnets_cfg.arch, badnets_cfg.attack_train_config(), "oracle");
      auto m = eval::evaluate(model, data.test, art->poisoned_test);
      oracle_asr = m.asr;
      oracle_text = "oracle-filtered retrain " + metrics_text(m);
    }
    report(6, "detector oracles", spectral.pass && ac.pass && oracle_asr <= 5.0,
           "spectral: " + spectral.detail + "; AC: " + ac.detail + "; " + oracle_text + " (gate ASR <= 5)");
  }

  // 7: attribution.
  {
    const auto add = testing::check_shapley_additive();
    const auto eff = testing::check_shapley_efficiency();
    testing::OcclusionStats occ;
    if (auto art = load_attack_artifacts(badnets_cfg)) {
      auto model = art->model.instantiate();
      auto data = load_clean_data(badnets_cfg);
      auto clean = data.test.images().slice(0, 0, 25);
      auto clean_cls = predict_labels(model, clean);
      auto poisoned = art->poisoned_test.data.images().slice(0, 0, 25);
      auto images = torch::cat({clean, poisoned});
      auto classes = torch::cat({clean_cls, torch::zeros({25}, torch::kInt64)});
      occ = testing::gradcam_occlusion(model, images, classes, model->stage_names().back(), 0);
    }
    const bool occ_ok = occ.fixtures == 50 && occ.passed * 5 >= occ.fixtures * 4;
    report(7, "attribution correctness", add.pass && eff.pass && occ_ok,
           "Shapley additive: " + add.detail + "; efficiency: " + eff.detail + "; Grad-CAM occlusion " +
               std::to_string(occ.passed) + "/" + std::to_string(occ.fixtures) + " (gate 80%)");
  }

  // 9: grid protocol through the CLI, with a forced interruption.
  criterion_protocol(work, bench);

  // 5: metric law over every triple logged by this and earlier test runs.
  {
    const char* log = std::getenv("BDB_METRIC_LOG");
    const auto mine = eval::metric_audit();
    eval::LogAudit audit;
    if (log) audit = eval::audit_metric_log(log);
    const bool pass = log && audit.lines > 0 && audit.violations == 0 && mine.violations == 0;
    report(5, "metric law", pass,
           (log ? std::to_string(audit.lines) + " logged triples, " + std::to_string(audit.violations) +
                      " violations, max ASR + R-Acc " + num(audit.max_sum)
                : std::string("BDB_METRIC_LOG not set")) +
               "; this process emitted " + std::to_string(mine.emitted));
  }

  std::sort(g_lines.begin(), g_lines.end(), [](const Line& a, const Line& b) { return a.id < b.id; });
  int failed = 0;
  std::cout << "\nsummary (" << num(seconds_since(t_all) / 60.0, 1) << " min)\n";
  for (const auto& l : g_lines) {
    std::cout << (l.pass ? "PASS" : "FAIL") << "  [" << l.id << "] " << l.name << "\n";
    failed += !l.pass;
  }
  std::cout << (g_lines.size() - failed) << "/" << g_lines.size() << " criteria passed\n";
  return failed ? 1 : 0;
}
