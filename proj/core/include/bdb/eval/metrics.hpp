#pragma once

#include "bdb/attacks/poisoned_dataset.hpp"
#include "bdb/checkpoint.hpp"
#include "bdb/dataset.hpp"
#include "bdb/models.hpp"

#include <json.hpp>

#include <filesystem>

namespace bdb::eval {

/// Clean accuracy, attack success rate, and robust accuracy, all in percent.
/// Only `make` builds one, and it enforces asr + r_acc <= 100.
struct MetricTriple {
  double c_acc = 0.0;
  double asr = 0.0;
  double r_acc = 0.0;
  int64_t n_clean_eval = 0;
  int64_t n_poison_eval = 0;
  int64_t target_class = 0;

  static MetricTriple make(double c_acc, double asr, double r_acc, int64_t n_clean, int64_t n_poison,
                           int64_t target_class);

  nlohmann::json to_json() const;
  /// Re-checks the invariants on the way in.
  static MetricTriple from_json(const nlohmann::json& j);
};

/// Throws InvariantViolation unless every metric is in [0, 100] and
/// asr + r_acc <= 100 (with a 1e-9 slack for rounding).
void check_metric_law(double c_acc, double asr, double r_acc);

/// Process-wide tally of triples built and checked. When the environment
/// variable BDB_METRIC_LOG names a file, each triple is also appended there
/// as one JSON line, so a whole test session can be audited afterwards.
struct MetricAudit {
  int64_t emitted = 0;
  int64_t violations = 0;
};
MetricAudit metric_audit();

struct LogAudit {
  int64_t lines = 0;
  int64_t violations = 0;
  double max_sum = 0.0;  // largest asr + r_acc seen
};
/// Re-checks every line of a metric log.
LogAudit audit_metric_log(const std::filesystem::path& path);

/// C-Acc over `clean_test`; ASR and R-Acc over `poisoned_test` (predicted
/// target vs predicted original label).
MetricTriple evaluate(Classifier& model, const LabeledDataset& clean_test, const attacks::PoisonedDataset& poisoned_test);
MetricTriple evaluate(const ModelCheckpoint& model, const LabeledDataset& clean_test,
                      const attacks::PoisonedDataset& poisoned_test);

}  // namespace bdb::eval
