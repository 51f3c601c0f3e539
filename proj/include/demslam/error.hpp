#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace demslam {

enum class ErrorCode {
  kAngleNearPi,
  kAntipodalNormal,
  kOutOfBounds,
  kNoData,
  kParseError,
  kDimensionMismatch,
  kInvalidIndex,
  kInvalidArgument,
  kSingularNormalEquations,
  kLengthMismatch,
  kIo,
  kConfig,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kAngleNearPi: return "AngleNearPi";
    case ErrorCode::kAntipodalNormal: return "AntipodalNormal";
    case ErrorCode::kOutOfBounds: return "OutOfBounds";
    case ErrorCode::kNoData: return "NoData";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kInvalidIndex: return "InvalidIndex";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kSingularNormalEquations: return "SingularNormalEquations";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kIo: return "IoError";
    case ErrorCode::kConfig: return "ConfigError";
  }
  return "Unknown";
}

/// Library-wide exception. Every failure carries a machine-readable code so
/// callers can distinguish skip-worthy conditions (OutOfBounds, NoData) from
/// fatal ones.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace demslam
