#pragma once

#include <stdexcept>
#include <string>

namespace entrain {

// Process exit codes shared by every subcommand.
enum class ExitCode : int {
  kOk = 0,
  kGeneric = 1,
  kValidation = 2,
  kBackend = 3,
  kDataGap = 4,
  kStatistical = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

// Malformed input files (JSON/CSV/JSONL) and violated preconditions.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what)
      : Error(ExitCode::kValidation, what) {}
};

class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Transport and protocol failures talking to a logit backend.
class BackendError : public Error {
 public:
  BackendError(const std::string& what, bool retryable)
      : Error(ExitCode::kBackend, what), retryable_(retryable) {}

  bool retryable() const noexcept { return retryable_; }

 private:
  bool retryable_;
};

class DataGapError : public Error {
 public:
  DataGapError(const std::string& probe_id, const std::string& what)
      : Error(ExitCode::kDataGap, what), probe_id_(probe_id) {}

  const std::string& probe_id() const noexcept { return probe_id_; }

 private:
  std::string probe_id_;
};

// Statistical preconditions: too few points, mixed signs, zero values, empty groups.
class StatsError : public Error {
 public:
  explicit StatsError(const std::string& what)
      : Error(ExitCode::kStatistical, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ExitCode::kGeneric, what) {}
};

}  // namespace entrain
