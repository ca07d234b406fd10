#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fundus {

enum class ErrorCode {
  NotFound,
  Format,
  Encoding,
  Argument,
  Stratification,
  Parameter,
  DivideByZero,
  Config,
  Contract,
  NoDetection,
  CdrUndefined,
  Load,
  Io,
  UndefinedMetric,
  Training,
  Screening,
};

std::string_view to_string(ErrorCode code);

/// Base exception for every failure raised by the library. The code lets
/// callers (and the CLI) classify failures without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& what);

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace fundus
