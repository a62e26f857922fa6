#include "bdb/protocol/grid.hpp"

#include "bdb/error.hpp"
#include "bdb/hashing.hpp"
#include "bdb/protocol/record.hpp"
#include "bdb/protocol/runner.hpp"
#include "../binary_io.hpp"

#include <fstream>
#include <iostream>
#include <map>
#include <spawn.h>
#include <sys/wait.h>

extern char** environ;

namespace bdb::protocol {

namespace fs = std::filesystem;
using nlohmann::json;

json GridSummary::to_json() const {
  return {{"cells", cells}, {"completed", completed}, {"skipped", skipped}, {"failed", failed},
          {"attack_trainings", attack_trainings}, {"failures", failures}};
}

int64_t attack_training_count(const ExperimentConfig& cfg) {
  std::ifstream in(cfg.attack_dir() / "trainings.log");
  int64_t n = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++n;
  return n;
}

namespace {

pid_t spawn(const std::vector<std::string>& args) {
  std::vector<char*> argv;
  for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);
  pid_t pid = 0;
  if (posix_spawn(&pid, argv[0], nullptr, nullptr, argv.data(), environ) != 0)
    throw Error("cannot start " + args[0]);
  return pid;
}

int exit_status(int status) {
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  return 128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0);
}

int spawn_and_wait(const std::vector<std::string>& args) {
  const auto pid = spawn(args);
  int status = 0;
  if (waitpid(pid, &status, 0) < 0) throw Error("lost track of cell process " + std::to_string(pid));
  return exit_status(status);
}

fs::path cell_config_file(const ExperimentConfig& cfg) {
  const auto dir = cfg.run_root / ".grid";
  fs::create_directories(dir);
  const auto path = dir / ("cell-" + cfg.config_hash().substr(0, 16) + ".json");
  detail::write_file_atomic(path, cfg.to_json().dump(2) + "\n");
  return path;
}

}  // namespace

int run_cell(const json& config, bool attack_stage_only, bool force) {
  auto cfg = ExperimentConfig::from_json(config);
  if (attack_stage_only) {
    auto data = load_clean_data(cfg);
    prepare_attack(cfg, data);
    return 0;
  }
  RunOptions opts;
  opts.force = force;
  auto out = run_experiment(cfg, opts);
  return out.record.ok() ? 0 : (out.record.exit_code ? out.record.exit_code : 3);
}

GridSummary run_grid(const GridConfig& grid, const GridOptions& options) {
  auto log = [&](const std::string& m) {
    if (options.log) options.log(m);
  };
  const auto exe = options.executable.empty() ? fs::read_symlink("/proc/self/exe") : options.executable;
  const bool inline_mode = grid.fan_out == "inline";
  GridSummary s;
  const auto cells = grid.expand();
  s.cells = static_cast<int64_t>(cells.size());

  // Cells sharing an attack prefix are consecutive (see GridConfig::expand).
  std::map<std::string, std::vector<ExperimentConfig>> groups;
  std::vector<std::string> order;
  for (const auto& c : cells) {
    const auto key = c.attack_hash();
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(c);
  }

  auto fail = [&](const ExperimentConfig& c, const std::string& stage, const std::string& why) {
    ++s.failed;
    s.failures.push_back({{"run_dir", c.run_dir().string()}, {"stage", stage}, {"error", why}});
    log("failed: " + c.run_dir().string() + " (" + why + ")");
  };

  for (const auto& key : order) {
    const auto& group = groups[key];
    std::vector<ExperimentConfig> todo;
    for (const auto& c : group) {
      if (!options.force && find_completed(c.run_dir(), c.config_hash())) {
        ++s.skipped;
        log("skip (complete): " + c.run_dir().string());
      } else {
        todo.push_back(c);
      }
    }
    if (todo.empty()) continue;

    const auto before = attack_training_count(todo.front());
    bool attack_ok = true;
    if (!load_attack_artifacts(todo.front())) {
      log("attack: " + todo.front().cell_dir().string());
      try {
        const int rc = inline_mode ? run_cell(todo.front().to_json(), true, false)
                                   : spawn_and_wait({exe.string(), "cell", "--config",
                                                     cell_config_file(todo.front()).string(), "--stage", "attack"});
        attack_ok = rc == 0;
        if (!attack_ok) fail(todo.front(), "attack", "exit code " + std::to_string(rc));
      } catch (const std::exception& e) {
        attack_ok = false;
        fail(todo.front(), "attack", e.what());
      }
    }
    s.attack_trainings += attack_training_count(todo.front()) - before;
    if (!attack_ok) {
      s.failed += static_cast<int64_t>(todo.size()) - 1;
      continue;
    }
    if (!inline_mode && grid.jobs > 1) {
      // Defense cells of one attack prefix only read the shared artifacts.
      std::map<pid_t, const ExperimentConfig*> running;
      auto reap = [&] {
        int status = 0;
        const pid_t pid = waitpid(-1, &status, 0);
        auto it = running.find(pid);
        if (pid < 0 || it == running.end()) throw Error("lost track of cell processes");
        const int rc = exit_status(status);
        if (rc == 0)
          ++s.completed;
        else
          fail(*it->second, "defense", "exit code " + std::to_string(rc));
        running.erase(it);
      };
      for (const auto& c : todo) {
        while (static_cast<int>(running.size()) >= grid.jobs) reap();
        log("cell: " + c.run_dir().string());
        std::vector<std::string> args = {exe.string(), "cell", "--config", cell_config_file(c).string()};
        if (options.force) args.push_back("--force");
        try {
          running.emplace(spawn(args), &c);
        } catch (const std::exception& e) {
          fail(c, "defense", e.what());
        }
      }
      while (!running.empty()) reap();
    } else {
      for (const auto& c : todo) {
        log("cell: " + c.run_dir().string());
        try {
          int rc = 0;
          if (inline_mode) {
            rc = run_cell(c.to_json(), false, options.force);
          } else {
            std::vector<std::string> args = {exe.string(), "cell", "--config", cell_config_file(c).string()};
            if (options.force) args.push_back("--force");
            rc = spawn_and_wait(args);
          }
          if (rc == 0)
            ++s.completed;
          else
            fail(c, "defense", "exit code " + std::to_string(rc));
        } catch (const std::exception& e) {
          fail(c, "defense", e.what());
        }
      }
    }
  }
  fs::create_directories(grid.base.run_root);
  detail::write_file_atomic(grid.base.run_root / "grid_summary.json", s.to_json().dump(2) + "\n");
  return s;
}

}  // namespace bdb::protocol
