#pragma once

#include <stdexcept>
#include <string>

namespace bdb {

/// Root of every error raised by the library. `exit_code()` is what the CLI
/// returns when the error escapes a command: 2 for configuration problems,
/// 3 for failures inside a pipeline stage.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 3; }
};

class ArgumentError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// Input-kind mismatch between a defense and the artifacts it was handed.
class RoutingError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// Clean-label schedule needs more target-class samples than exist.
class CapacityError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class LoadError : public Error {
 public:
  using Error::Error;
};

class MigrationError : public LoadError {
 public:
  using LoadError::LoadError;
};

class PrerequisiteError : public Error {
 public:
  using Error::Error;
};

class TrainingFailure : public Error {
 public:
  using Error::Error;
};

/// Refusal to hand back a model that an operation has rendered useless.
class SafetyError : public Error {
 public:
  using Error::Error;
};

/// Violated internal invariant (e.g. ASR + R-Acc > 100).
class InvariantViolation : public Error {
 public:
  using Error::Error;
};

void warn(const std::string& message);

}  // namespace bdb
