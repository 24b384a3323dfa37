#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace navrobust {

enum class ErrorCode {
  kInvalidArgument,
  kHorizonExceedsData,
  kTrajectoryTooShort,
  kGenerationFailed,
  kInvalidFraction,
  kIoError,
  kSchemaVersionMismatch,
  kValidationError,
  kNonPositiveGap,
  kHorizonMismatch,
  kZeroWeightSum,
  kZeroOrigin,
  kDimMismatch,
  kTooFewStyles,
  kTooFewSamples,
  kStepOutOfRange,
  kEmptyAnchors,
  kMissingDataset,
  kConfigError,
  kNumericFailure,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so that
/// callers (and the CLI exit-code mapping) can dispatch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kHorizonExceedsData: return "HorizonExceedsData";
    case ErrorCode::kTrajectoryTooShort: return "TrajectoryTooShort";
    case ErrorCode::kGenerationFailed: return "GenerationFailed";
    case ErrorCode::kInvalidFraction: return "InvalidFraction";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kSchemaVersionMismatch: return "SchemaVersionMismatch";
    case ErrorCode::kValidationError: return "ValidationError";
    case ErrorCode::kNonPositiveGap: return "NonPositiveGap";
    case ErrorCode::kHorizonMismatch: return "HorizonMismatch";
    case ErrorCode::kZeroWeightSum: return "ZeroWeightSum";
    case ErrorCode::kZeroOrigin: return "ZeroOrigin";
    case ErrorCode::kDimMismatch: return "DimMismatch";
    case ErrorCode::kTooFewStyles: return "TooFewStyles";
    case ErrorCode::kTooFewSamples: return "TooFewSamples";
    case ErrorCode::kStepOutOfRange: return "StepOutOfRange";
    case ErrorCode::kEmptyAnchors: return "EmptyAnchors";
    case ErrorCode::kMissingDataset: return "MissingDataset";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kNumericFailure: return "NumericFailure";
  }
  return "Unknown";
}

}  // namespace navrobust
