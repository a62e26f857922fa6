#include "bdb/eval/metrics.hpp"

#include "bdb/error.hpp"
#include "bdb/training.hpp"

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <mutex>

namespace bdb::eval {

namespace {

std::atomic<int64_t> g_emitted{0};
std::atomic<int64_t> g_violations{0};
std::mutex g_log_mutex;

void log_triple(const MetricTriple& m) {
  const char* path = std::getenv("BDB_METRIC_LOG");
  if (!path || !*path) return;
  std::lock_guard lock(g_log_mutex);
  std::ofstream out(path, std::ios::app);
  if (out) out << m.to_json().dump() << "\n";
}

}  // namespace

void check_metric_law(double c_acc, double asr, double r_acc) {
  for (double v : {c_acc, asr, r_acc})
    if (!(v >= 0.0 && v <= 100.0)) throw InvariantViolation("metric outside [0, 100]: " + std::to_string(v));
  if (asr + r_acc > 100.0 + 1e-9)
    throw InvariantViolation("asr + r_acc exceeds 100 (" + std::to_string(asr) + " + " + std::to_string(r_acc) + ")");
}

MetricTriple MetricTriple::make(double c_acc, double asr, double r_acc, int64_t n_clean, int64_t n_poison,
                                int64_t target_class) {
  try {
    check_metric_law(c_acc, asr, r_acc);
  } catch (const InvariantViolation&) {
    ++g_violations;
    throw;
  }
  MetricTriple m{c_acc, asr, r_acc, n_clean, n_poison, target_class};
  ++g_emitted;
  log_triple(m);
  return m;
}

nlohmann::json MetricTriple::to_json() const {
  return {{"c_acc", c_acc}, {"asr", asr}, {"r_acc", r_acc}, {"n_clean_eval", n_clean_eval},
          {"n_poison_eval", n_poison_eval}, {"target_class", target_class}};
}

MetricTriple MetricTriple::from_json(const nlohmann::json& j) {
  const double c = j.at("c_acc").get<double>(), a = j.at("asr").get<double>(), r = j.at("r_acc").get<double>();
  check_metric_law(c, a, r);
  return {c, a, r, j.value("n_clean_eval", int64_t{0}), j.value("n_poison_eval", int64_t{0}),
          j.value("target_class", int64_t{0})};
}

MetricAudit metric_audit() { return {g_emitted.load(), g_violations.load()}; }

LogAudit audit_metric_log(const std::filesystem::path& path) {
  LogAudit a;
  std::ifstream in(path);
  if (!in) return a;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++a.lines;
    try {
      auto j = nlohmann::json::parse(line);
      const double sum = j.at("asr").get<double>() + j.at("r_acc").get<double>();
      a.max_sum = std::max(a.max_sum, sum);
      check_metric_law(j.at("c_acc").get<double>(), j.at("asr").get<double>(), j.at("r_acc").get<double>());
    } catch (const std::exception&) {
      ++a.violations;
    }
  }
  return a;
}

MetricTriple evaluate(Classifier& model, const LabeledDataset& clean_test, const attacks::PoisonedDataset& poisoned) {
  if (clean_test.empty()) throw ArgumentError("evaluate: empty clean test set");
  if (poisoned.data.empty()) throw ArgumentError("evaluate: empty poisoned test set");
  const auto target = poisoned.schedule.target_class;
  const double c_acc = accuracy(model, clean_test);
  const auto pred = predict_labels(model, poisoned.data.images());
  const auto n = static_cast<double>(poisoned.data.size());
  const double asr = 100.0 * pred.eq(target).sum().item<double>() / n;
  const double r_acc = 100.0 * pred.eq(poisoned.original_label_tensor()).sum().item<double>() / n;
  return MetricTriple::make(c_acc, asr, r_acc, clean_test.size(), poisoned.data.size(), target);
}

MetricTriple evaluate(const ModelCheckpoint& model, const LabeledDataset& clean_test,
                      const attacks::PoisonedDataset& poisoned_test) {
  auto net = model.instantiate();
  return evaluate(net, clean_test, poisoned_test);
}

}  // namespace bdb::eval
