#pragma once

#include <stdexcept>
#include <string>

namespace poolrank {

/// Failure categories. The numeric value of each category is the CLI exit code.
enum class ErrorKind : int {
  usage = 2,
  data = 3,
  numeric = 4,
};

/// Fine-grained reason, used by the readers so callers (and tests) can tell
/// a corrupted header from a truncated payload without parsing messages.
enum class ErrorCode {
  io,
  bad_magic,
  bad_version,
  truncated_payload,
  non_finite,
  dimension_overflow,
  invalid_shape,
  insufficient_data,
  dimension_mismatch,
  duplicate_id,
  dangling_path,
  missing_relevant,
  missing_label,
  bad_manifest,
  invalid_argument,
  numeric_failure,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::io: return "i/o error";
    case ErrorCode::bad_magic: return "bad magic";
    case ErrorCode::bad_version: return "version mismatch";
    case ErrorCode::truncated_payload: return "truncated payload";
    case ErrorCode::non_finite: return "non-finite value";
    case ErrorCode::dimension_overflow: return "dimension overflow";
    case ErrorCode::invalid_shape: return "invalid shape";
    case ErrorCode::insufficient_data: return "insufficient data";
    case ErrorCode::dimension_mismatch: return "dimension mismatch";
    case ErrorCode::duplicate_id: return "duplicate image id";
    case ErrorCode::dangling_path: return "dangling path";
    case ErrorCode::missing_relevant: return "query group without relevant reference";
    case ErrorCode::missing_label: return "missing class label";
    case ErrorCode::bad_manifest: return "malformed manifest";
    case ErrorCode::invalid_argument: return "invalid argument";
    case ErrorCode::numeric_failure: return "numeric failure";
  }
  return "unknown error";
}

inline ErrorKind kind_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return ErrorKind::usage;
    case ErrorCode::numeric_failure: return ErrorKind::numeric;
    default: return ErrorKind::data;
  }
}

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + (detail.empty() ? "" : ": " + detail)),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  ErrorKind kind() const noexcept { return kind_of(code_); }
  int exit_code() const noexcept { return static_cast<int>(kind()); }

private:
  ErrorCode code_;
};

}  // namespace poolrank
