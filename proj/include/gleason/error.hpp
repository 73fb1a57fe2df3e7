#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gleason {

// Error categories; the CLI maps each to a distinct exit code.
enum class ErrorCode {
  kInvalidArgument = 1,
  kPrecondition,
  kNoTumor,
  kNonIdentifiable,
  kIo,
  kSchema,
  kInfeasible,
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kPrecondition: return "precondition_failed";
    case ErrorCode::kNoTumor: return "no_tumor";
    case ErrorCode::kNonIdentifiable: return "non_identifiable";
    case ErrorCode::kIo: return "io_error";
    case ErrorCode::kSchema: return "schema_violation";
    case ErrorCode::kInfeasible: return "infeasible";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, std::string_view what) {
  if (!cond) [[unlikely]] fail(code, std::string(what));
}

}  // namespace gleason
