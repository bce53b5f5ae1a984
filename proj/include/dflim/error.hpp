#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dflim {

enum class ErrorKind {
  InvalidInput,
  NumericalFailure,
  NotPositiveDefinite,
  DegenerateSpectrum,
  InsufficientData,
  DegenerateVariance,
  InfeasibleTarget,
  UsageError,
  ParseError,
  IoError,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "InvalidInput";
    case ErrorKind::NumericalFailure: return "NumericalFailure";
    case ErrorKind::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorKind::DegenerateSpectrum: return "DegenerateSpectrum";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::DegenerateVariance: return "DegenerateVariance";
    case ErrorKind::InfeasibleTarget: return "InfeasibleTarget";
    case ErrorKind::UsageError: return "UsageError";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

/**
 * Base exception for everything the library reports. The kind is stable and
 * meant for programmatic dispatch (exit codes, test assertions); the message
 * is for humans.
 */
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind), detail_(what) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// Message without the kind prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

/// Cholesky failure; carries the smallest pivot seen on the last attempt.
class NotPositiveDefiniteError : public Error {
 public:
  NotPositiveDefiniteError(const std::string& what, double pivot, long index)
      : Error(ErrorKind::NotPositiveDefinite,
              what + " (pivot " + std::to_string(pivot) + " at index " + std::to_string(index) + ")"),
        pivot_(pivot),
        index_(index) {}

  double pivot() const noexcept { return pivot_; }
  long index() const noexcept { return index_; }

 private:
  double pivot_;
  long index_;
};

/// Parse failure in an input file; offset is a byte offset or a row number.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, long long offset)
      : Error(ErrorKind::ParseError, what), offset_(offset) {}

  long long offset() const noexcept { return offset_; }

 private:
  long long offset_;
};

/// Prefixes a pipeline stage name onto an error while keeping its kind.
template <typename F>
auto with_stage(std::string_view stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.kind(), "stage '" + std::string(stage) + "': " + e.detail());
  }
}

/// Exit codes: 1 for detection-domain failures, 2 for I/O and parse failures.
inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ParseError:
    case ErrorKind::IoError:
      return 2;
    default:
      return 1;
  }
}

}  // namespace dflim
