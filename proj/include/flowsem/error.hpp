#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace flowsem {

enum class ErrorCode {
  BadParam,
  OutOfDomain,
  FormatError,
  IoError,
  DegenerateSegment,
  ShapeMismatch,
  EmptyQuery,
  EmptyIndex,
  ServiceUnavailable,
  Timeout,
  BadResponse,
  ConfigError,
  BindError,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::BadParam: return "BadParam";
    case ErrorCode::OutOfDomain: return "OutOfDomain";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::DegenerateSegment: return "DegenerateSegment";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyQuery: return "EmptyQuery";
    case ErrorCode::EmptyIndex: return "EmptyIndex";
    case ErrorCode::ServiceUnavailable: return "ServiceUnavailable";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::BadResponse: return "BadResponse";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::BindError: return "BindError";
  }
  return "Unknown";
}

/// Single exception type for the library; `code()` carries the failure kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace flowsem
