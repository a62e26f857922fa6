#include "bdb/error.hpp"
#include "bdb/protocol/aggregate.hpp"
#include "bdb/protocol/config.hpp"
#include "bdb/protocol/record.hpp"
#include "bdb/protocol/report.hpp"
#include "bdb/protocol/runner.hpp"

#include "doctest_torch.hpp"

#include <filesystem>
#include <fstream>
#include <sys/stat.h>
#include <unistd.h>

using namespace bdb;
using namespace bdb::protocol;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("bdb-proto-" + name + "-" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ResultRecord sample_record(const std::string& attack, const std::string& defense, double ratio, double asr,
                           double racc) {
  ExperimentConfig cfg;
  cfg.attack = attack;
  cfg.defense = defense;
  cfg.ratio = ratio;
  ResultRecord r;
  r.config = cfg.to_json();
  r.config_hash = cfg.config_hash();
  r.attack_hash = cfg.attack_hash();
  r.pre = eval::MetricTriple::make(90, 95, 4, 100, 90, 0);
  r.post = eval::MetricTriple::make(85, asr, racc, 100, 90, 0);
  r.created_at = utc_timestamp();
  return r;
}

}  // namespace

TEST_CASE("config round trip and hash stability") {
  ExperimentConfig cfg;
  cfg.attack = "blended";
  cfg.defense = "ft";
  cfg.ratio = 0.05;
  cfg.run_root = "somewhere";
  auto back = ExperimentConfig::from_json(cfg.to_json());
  CHECK(back.config_hash() == cfg.config_hash());
  auto moved = cfg;
  moved.run_root = "elsewhere";
  moved.verbose = true;
  CHECK(moved.config_hash() == cfg.config_hash());  // paths do not change identity
  auto other_defense = cfg;
  other_defense.defense = "nc";
  CHECK(other_defense.config_hash() != cfg.config_hash());
  CHECK(other_defense.attack_hash() == cfg.attack_hash());
  CHECK(cfg.run_dir() == fs::path("somewhere") / cfg.dataset / "small-cnn" / "blended_0.05" / "ft");
}

TEST_CASE("config validation") {
  auto j = ExperimentConfig{}.to_json();
  j["no_such_key"] = 1;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  auto full = ExperimentConfig{}.to_json();
  full["scale"] = "full";
  full["ratio"] = 0.2;
  CHECK_THROWS_AS(ExperimentConfig::from_json(full), ConfigError);
  full["ratio"] = 0.005;
  CHECK_NOTHROW(ExperimentConfig::from_json(full));
  auto attack_only = ExperimentConfig{}.to_json();
  attack_only["mode"] = "attack";
  attack_only["defense"] = "ft";
  CHECK_THROWS_AS(ExperimentConfig::from_json(attack_only), ConfigError);
  auto bad_attack = ExperimentConfig{}.to_json();
  bad_attack["attack"] = "refool";
  CHECK_THROWS_AS(ExperimentConfig::from_json(bad_attack), ConfigError);
}

TEST_CASE("grid expansion keeps attack cells adjacent") {
  json g = {{"base", ExperimentConfig{}.to_json()},
            {"attacks", {"badnets", "blended"}},
            {"defenses", {"ft", "fp", "nc"}},
            {"ratios", {0.1}}};
  auto grid = GridConfig::from_json(g);
  auto cells = grid.expand();
  REQUIRE(cells.size() == 6);
  CHECK(cells[0].attack_hash() == cells[2].attack_hash());
  CHECK(cells[2].attack_hash() != cells[3].attack_hash());
  for (const auto& c : cells) CHECK(c.mode == Mode::Joint);
}

TEST_CASE("routing errors name the required inputs") {
  auto net = make_classifier({Arch::SmallCNN, 10, {32, 32, 3}});
  DefenseArtifacts only_model;
  only_model.model.emplace(ModelCheckpoint::capture(net, {{"x", "y"}}, 0));
  try {
    check_routing("ac", only_model);
    FAIL("expected a routing error");
  } catch (const RoutingError& e) {
    CHECK(std::string(e.what()).find("poisoned") != std::string::npos);
  }
  CHECK_THROWS_AS(check_routing("abl", only_model), RoutingError);
  CHECK_THROWS_AS(check_routing("ft", only_model), RoutingError);  // needs the clean reserve
}

TEST_CASE("records are immutable and never overwritten") {
  const auto dir = scratch("records");
  auto r = sample_record("badnets", "ft", 0.1, 5, 80);
  const auto first = write_record(r, dir);
  CHECK(first.filename() == "record.json");
  struct stat st {};
  REQUIRE(::stat(first.c_str(), &st) == 0);
  CHECK((st.st_mode & 0222) == 0);
  const auto second = write_record(r, dir);
  CHECK(second != first);
  CHECK(record_files(dir).size() == 2);
  auto loaded = ResultRecord::from_json(json::parse(std::ifstream(first)));
  CHECK(loaded.config_hash == ExperimentConfig::from_json(loaded.config).config_hash());
  CHECK(find_completed(dir, r.config_hash).has_value());
  CHECK_FALSE(find_completed(dir, "other").has_value());
  fs::permissions(dir, fs::perms::owner_all);
  fs::remove_all(dir);
}

TEST_CASE("records from a newer schema are rejected") {
  auto j = sample_record("badnets", "none", 0.1, 95, 4).to_json();
  j["schema_version"] = kRecordSchemaVersion + 1;
  CHECK_THROWS(ResultRecord::from_json(j));
}

TEST_CASE("aggregation of an empty root gives a header-only table") {
  const auto dir = scratch("agg-empty");
  auto agg = aggregate_results(dir);
  write_aggregate(agg, dir);
  std::ifstream in(dir / "results.csv");
  std::string header, extra;
  std::getline(in, header);
  CHECK(header.rfind("dataset,arch,attack,ratio,defense", 0) == 0);
  CHECK_FALSE(static_cast<bool>(std::getline(in, extra)));
  fs::remove_all(dir);
}

TEST_CASE("aggregation skips malformed records and resolves duplicates by time") {
  const auto dir = scratch("agg");
  auto old_rec = sample_record("badnets", "ft", 0.1, 5, 80);
  old_rec.created_at = "2020-01-01T00:00:00.000Z";
  auto new_rec = old_rec;
  new_rec.created_at = "2021-01-01T00:00:00.000Z";
  new_rec.runtime_seconds = 42;
  write_record(new_rec, dir / "a");
  write_record(old_rec, dir / "b");
  auto other = sample_record("blended", "ft", 0.1, 70, 20);
  other.framework_version = "0.0.1";
  write_record(other, dir / "c");
  fs::create_directories(dir / "d");
  std::ofstream(dir / "d" / "record.json") << "{not json";
  auto agg = aggregate_results(dir);
  CHECK(agg.rows.size() == 2);
  CHECK(agg.skipped.size() == 1);
  REQUIRE(agg.duplicates.size() == 1);
  CHECK(agg.duplicates[0]["superseded"].size() == 1);
  bool saw_old_version = false;
  for (const auto& row : agg.rows) {
    if (row["attack"] == "badnets") CHECK(row["runtime_seconds"].get<double>() == doctest::Approx(42));
    if (row["framework_version"] == "0.0.1") saw_old_version = true;
  }
  CHECK(saw_old_version);
  for (const auto& sub : {"a", "b", "c"}) fs::permissions(dir / sub, fs::perms::owner_all);
  fs::remove_all(dir);
}

TEST_CASE("report renders scatter, anti-diagonal, and ratio ticks") {
  const auto dir = scratch("report");
  std::vector<ResultRecord> recs;
  for (double ratio : {0.001, 0.005, 0.01, 0.05, 0.1}) recs.push_back(sample_record("badnets", "ft", ratio, 10, 80));
  recs.push_back(sample_record("blended", "ft", 0.1, 70, 25));
  auto files = render_report(recs, dir);
  CHECK(files.size() == 3);
  auto read = [](const fs::path& p) {
    std::ifstream in(p);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  const auto ratio_svg = read(dir / "ratio_ft.svg");
  size_t ticks = 0;
  for (size_t pos = ratio_svg.find("class=\"xtick\""); pos != std::string::npos;
       pos = ratio_svg.find("class=\"xtick\"", pos + 1))
    ++ticks;
  CHECK(ticks == 5);
  CHECK(read(dir / "racc_vs_asr.svg").find("ASR + R-Acc = 100") != std::string::npos);

  auto single = render_report({recs.front()}, dir / "single");
  CHECK(fs::exists(dir / "single" / "cacc_vs_asr.svg"));
  CHECK_THROWS_AS(render_report({}, dir / "none"), ArgumentError);
  fs::remove_all(dir);
}
