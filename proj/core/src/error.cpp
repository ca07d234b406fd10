#include "fundus/error.hpp"

namespace fundus {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotFound: return "not-found";
    case ErrorCode::Format: return "format";
    case ErrorCode::Encoding: return "encoding";
    case ErrorCode::Argument: return "argument";
    case ErrorCode::Stratification: return "stratification";
    case ErrorCode::Parameter: return "parameter";
    case ErrorCode::DivideByZero: return "divide-by-zero";
    case ErrorCode::Config: return "config";
    case ErrorCode::Contract: return "contract";
    case ErrorCode::NoDetection: return "no-detection";
    case ErrorCode::CdrUndefined: return "cdr-undefined";
    case ErrorCode::Load: return "load";
    case ErrorCode::Io: return "io";
    case ErrorCode::UndefinedMetric: return "undefined-metric";
    case ErrorCode::Training: return "training";
    case ErrorCode::Screening: return "screening";
  }
  return "unknown";
}

void fail(ErrorCode code, const std::string& what) {
  throw Error(code, std::string(to_string(code)) + " error: " + what);
}

}  // namespace fundus
