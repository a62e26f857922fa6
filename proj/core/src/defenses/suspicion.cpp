#include "bdb/defenses/suspicion.hpp"

#include "bdb/error.hpp"
#include "../binary_io.hpp"

#include <algorithm>
#include <unordered_set>

namespace bdb::defenses {

void SuspicionReport::score_against(const std::vector<int64_t>& all_ids, const std::vector<int64_t>& poisoned_ids) {
  std::unordered_set<int64_t> poison(poisoned_ids.begin(), poisoned_ids.end());
  std::unordered_set<int64_t> flagged(suspected_ids.begin(), suspected_ids.end());
  Confusion c;
  for (auto id : all_ids) {
    const bool p = poison.count(id) > 0, f = flagged.count(id) > 0;
    if (p && f) ++c.tp;
    else if (!p && f) ++c.fp;
    else if (p && !f) ++c.fn;
    else ++c.tn;
  }
  confusion = c;
  n_total = static_cast<int64_t>(all_ids.size());
}

nlohmann::json SuspicionReport::to_json() const {
  nlohmann::json j = {{"method", method}, {"params", params}, {"suspected_ids", suspected_ids}, {"n_total", n_total},
                      {"notes", notes}};
  nlohmann::json s = nlohmann::json::object();
  for (const auto& [id, v] : scores) s[std::to_string(id)] = v;
  j["scores"] = s;
  if (confusion) {
    j["confusion"] = {{"tp", confusion->tp}, {"fp", confusion->fp}, {"fn", confusion->fn}, {"tn", confusion->tn}};
    j["precision"] = confusion->precision();
    j["recall"] = confusion->recall();
  }
  return j;
}

SuspicionReport SuspicionReport::from_json(const nlohmann::json& j) {
  SuspicionReport r;
  try {
    r.method = j.at("method").get<std::string>();
    r.params = j.value("params", nlohmann::json::object());
    r.suspected_ids = j.at("suspected_ids").get<std::vector<int64_t>>();
    r.n_total = j.value("n_total", int64_t{0});
    r.notes = j.value("notes", std::vector<std::string>{});
    for (const auto& [k, v] : j.value("scores", nlohmann::json::object()).items()) r.scores[std::stoll(k)] = v.get<double>();
    if (j.contains("confusion")) {
      const auto& c = j.at("confusion");
      r.confusion = Confusion{c.at("tp").get<int64_t>(), c.at("fp").get<int64_t>(), c.at("fn").get<int64_t>(),
                              c.at("tn").get<int64_t>()};
    }
  } catch (const std::exception& e) {
    throw LoadError(std::string("malformed suspicion report: ") + e.what());
  }
  std::sort(r.suspected_ids.begin(), r.suspected_ids.end());
  return r;
}

void save_suspicion(const SuspicionReport& report, const std::filesystem::path& path) {
  detail::write_file_atomic(path, report.to_json().dump(2) + "\n");
}

SuspicionReport load_suspicion(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw LoadError("suspicion report not found: " + path.string());
  try {
    return SuspicionReport::from_json(nlohmann::json::parse(detail::read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw LoadError("corrupt suspicion report " + path.string() + ": " + e.what());
  }
}

}  // namespace bdb::defenses
