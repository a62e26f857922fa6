#include "bdb/protocol/record.hpp"

#include "bdb/error.hpp"
#include "../binary_io.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fcntl.h>
#include <sys/stat.h>
#include <fstream>
#include <functional>
#include <regex>
#include <unistd.h>

namespace bdb::protocol {

namespace fs = std::filesystem;

nlohmann::json ResultRecord::to_json() const {
  nlohmann::json j = {{"schema_version", schema_version},
                      {"status", status},
                      {"config", config},
                      {"config_hash", config_hash},
                      {"attack_hash", attack_hash},
                      {"pre", pre ? pre->to_json() : nlohmann::json()},
                      {"post", post ? post->to_json() : nlohmann::json()},
                      {"runtime_seconds", runtime_seconds},
                      {"framework_version", framework_version},
                      {"created_at", created_at},
                      {"details", details}};
  if (!ok()) {
    j["error"] = error;
    j["exit_code"] = exit_code;
  }
  return j;
}

ResultRecord ResultRecord::from_json(const nlohmann::json& j) {
  ResultRecord r;
  try {
    r.schema_version = j.at("schema_version").get<int>();
    if (r.schema_version > kRecordSchemaVersion)
      throw LoadError("record schema v" + std::to_string(r.schema_version) + " is newer than this build");
    r.status = j.at("status").get<std::string>();
    r.error = j.value("error", std::string());
    r.exit_code = j.value("exit_code", 0);
    r.config = j.at("config");
    r.config_hash = j.at("config_hash").get<std::string>();
    r.attack_hash = j.value("attack_hash", std::string());
    if (j.contains("pre") && !j.at("pre").is_null()) r.pre = eval::MetricTriple::from_json(j.at("pre"));
    if (j.contains("post") && !j.at("post").is_null()) r.post = eval::MetricTriple::from_json(j.at("post"));
    r.runtime_seconds = j.value("runtime_seconds", 0.0);
    r.framework_version = j.value("framework_version", std::string("unknown"));
    r.created_at = j.value("created_at", std::string());
    r.details = j.value("details", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("malformed record: ") + e.what());
  }
  return r;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof(out), "%s.%03lldZ", buf, static_cast<long long>(ms));
  return out;
}

fs::path write_record(const ResultRecord& record, const fs::path& dir) {
  fs::create_directories(dir);
  const auto text = record.to_json().dump(2) + "\n";
  // Write a private temp file, then link() it under the first free name:
  // link never replaces an existing file, and a crash leaves either no
  // record or a complete one.
  auto tmp = dir / (".record-" + std::to_string(::getpid()) + "-" + std::to_string(std::hash<std::string>{}(text)));
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0444);
  if (fd < 0) throw Error("cannot create " + tmp.string());
  size_t done = 0;
  while (done < text.size()) {
    const auto w = ::write(fd, text.data() + done, text.size() - done);
    if (w <= 0) {
      ::close(fd);
      ::unlink(tmp.c_str());
      throw Error("short write to " + tmp.string());
    }
    done += static_cast<size_t>(w);
  }
  ::fsync(fd);
  ::close(fd);
  for (int n = 0; n < 100000; ++n) {
    const auto path = dir / (n == 0 ? std::string("record.json") : "record-" + std::to_string(n) + ".json");
    if (::link(tmp.c_str(), path.c_str()) == 0) {
      ::unlink(tmp.c_str());
      return path;
    }
    if (errno != EEXIST) {
      ::unlink(tmp.c_str());
      throw Error("cannot create " + path.string());
    }
  }
  ::unlink(tmp.c_str());
  throw Error("too many records in " + dir.string());
}

namespace {

bool is_record_name(const std::string& name) {
  static const std::regex re(R"(record(-\d+)?\.json)");
  return std::regex_match(name, re);
}

int record_number(const fs::path& p) {
  const auto stem = p.stem().string();
  return stem == "record" ? 0 : std::stoi(stem.substr(7));
}

}  // namespace

std::vector<fs::path> record_files(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_record_name(e.path().filename().string())) out.push_back(e.path());
  std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) { return record_number(a) < record_number(b); });
  return out;
}

std::optional<ResultRecord> find_completed(const fs::path& dir, const std::string& hash) {
  for (const auto& p : record_files(dir)) {
    try {
      auto r = ResultRecord::from_json(nlohmann::json::parse(detail::read_file(p)));
      if (r.ok() && r.config_hash == hash) return r;
    } catch (const std::exception&) {
      // unreadable record: not a completion
    }
  }
  return std::nullopt;
}

std::vector<fs::path> scan_records(const fs::path& root) {
  std::vector<fs::path> out;
  if (!fs::is_directory(root)) return out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && is_record_name(e.path().filename().string())) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace bdb::protocol
