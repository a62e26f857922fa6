#include "bdb/protocol/aggregate.hpp"

#include "bdb/error.hpp"
#include "../binary_io.hpp"

#include <map>
#include <sstream>

namespace bdb::protocol {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string>& aggregate_columns() {
  static const std::vector<std::string> cols = {
      "dataset",  "arch",  "attack",      "ratio",  "defense", "scale",           "seed",
      "status",   "c_acc_pre", "asr_pre", "r_acc_pre", "c_acc", "asr",           "r_acc",
      "runtime_seconds", "framework_version", "schema_version", "config_hash", "created_at", "path"};
  return cols;
}

namespace {

json row_of(const ResultRecord& r, const fs::path& path) {
  const auto& c = r.config;
  json row = {{"dataset", c.value("dataset", "")},
              {"arch", c.value("arch", "")},
              {"attack", c.value("attack", "")},
              {"ratio", c.value("ratio", 0.0)},
              {"defense", c.value("defense", "")},
              {"scale", c.value("scale", "")},
              {"seed", c.value("seed", 0)},
              {"status", r.status},
              {"runtime_seconds", r.runtime_seconds},
              {"framework_version", r.framework_version},
              {"schema_version", r.schema_version},
              {"config_hash", r.config_hash},
              {"created_at", r.created_at},
              {"path", path.string()}};
  auto put = [&](const std::optional<eval::MetricTriple>& m, const std::string& suffix) {
    row["c_acc" + suffix] = m ? json(m->c_acc) : json();
    row["asr" + suffix] = m ? json(m->asr) : json();
    row["r_acc" + suffix] = m ? json(m->r_acc) : json();
  };
  put(r.pre, "_pre");
  put(r.post, "");
  return row;
}

std::string csv_cell(const json& v) {
  if (v.is_null()) return "";
  if (v.is_string()) {
    auto s = v.get<std::string>();
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return q + "\"";
  }
  return v.dump();
}

}  // namespace

Aggregate aggregate_results(const fs::path& root) {
  Aggregate agg;
  struct Entry {
    ResultRecord record;
    fs::path path;
  };
  std::map<std::string, std::vector<Entry>> by_hash;
  for (const auto& path : scan_records(root)) {
    try {
      auto j = json::parse(detail::read_file(path));
      auto r = ResultRecord::from_json(j);
      by_hash[r.config_hash].push_back({std::move(r), path});
    } catch (const InvariantViolation& e) {
      ++agg.metric_law_violations;
      agg.skipped.push_back({{"path", path.string()}, {"reason", e.what()}});
    } catch (const std::exception& e) {
      agg.skipped.push_back({{"path", path.string()}, {"reason", e.what()}});
    }
  }
  for (auto& [hash, entries] : by_hash) {
    std::stable_sort(entries.begin(), entries.end(),
                     [](const Entry& a, const Entry& b) { return a.record.created_at < b.record.created_at; });
    const auto& kept = entries.back();
    if (entries.size() > 1) {
      json superseded = json::array();
      for (size_t i = 0; i + 1 < entries.size(); ++i) superseded.push_back(entries[i].path.string());
      agg.duplicates.push_back({{"config_hash", hash}, {"kept", kept.path.string()}, {"superseded", superseded}});
    }
    agg.rows.push_back(row_of(kept.record, kept.path));
    agg.records.push_back(kept.record);
  }
  return agg;
}

void write_aggregate(const Aggregate& agg, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::ostringstream csv;
  const auto& cols = aggregate_columns();
  for (size_t i = 0; i < cols.size(); ++i) csv << (i ? "," : "") << cols[i];
  csv << "\n";
  for (const auto& row : agg.rows) {
    for (size_t i = 0; i < cols.size(); ++i) csv << (i ? "," : "") << csv_cell(row.value(cols[i], json()));
    csv << "\n";
  }
  detail::write_file_atomic(out_dir / "results.csv", csv.str());
  json doc = {{"columns", cols},
              {"rows", agg.rows},
              {"audit",
               {{"skipped", agg.skipped},
                {"duplicates", agg.duplicates},
                {"metric_law_violations", agg.metric_law_violations}}}};
  detail::write_file_atomic(out_dir / "results.json", doc.dump(2) + "\n");
}

}  // namespace bdb::protocol
