#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace romda {

enum class ErrorCode {
  // grid / observation
  AltitudeOutOfRange,
  NonFiniteCoordinate,
  DimensionMismatch,
  NonPositiveDensity,
  // latent
  RankTooLarge,
  DegenerateData,
  // features / ident
  NonFinite,
  SingularSystem,
  InsufficientData,
  NoRealPrincipalRoot,
  // filter
  CadenceMismatch,
  NonFiniteState,
  NonPositiveInnovationVariance,
  // drivers
  OutOfRangeEpoch,
  DuplicateEpoch,
  // twin
  UnstableTruth,
  // dataio
  BadMagic,
  TruncatedFile,
  OverlappingBlocks,
  EmptyAfterPreprocessing,
  NonPositiveTrainingDensity,
  GridMismatch,
  ParseError,
  // harness
  EmptyInput,
  NonPositiveMeasurement,
  IoFailure,
  ConfigError,
  InvalidArgument,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::AltitudeOutOfRange: return "AltitudeOutOfRange";
    case ErrorCode::NonFiniteCoordinate: return "NonFiniteCoordinate";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonPositiveDensity: return "NonPositiveDensity";
    case ErrorCode::RankTooLarge: return "RankTooLarge";
    case ErrorCode::DegenerateData: return "DegenerateData";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::NoRealPrincipalRoot: return "NoRealPrincipalRoot";
    case ErrorCode::CadenceMismatch: return "CadenceMismatch";
    case ErrorCode::NonFiniteState: return "NonFiniteState";
    case ErrorCode::NonPositiveInnovationVariance: return "NonPositiveInnovationVariance";
    case ErrorCode::OutOfRangeEpoch: return "OutOfRangeEpoch";
    case ErrorCode::DuplicateEpoch: return "DuplicateEpoch";
    case ErrorCode::UnstableTruth: return "UnstableTruth";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::OverlappingBlocks: return "OverlappingBlocks";
    case ErrorCode::EmptyAfterPreprocessing: return "EmptyAfterPreprocessing";
    case ErrorCode::NonPositiveTrainingDensity: return "NonPositiveTrainingDensity";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::NonPositiveMeasurement: return "NonPositiveMeasurement";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Exit-code class used by the command-line tool.
enum class ErrorCategory { Config = 2, Data = 3, Numerical = 4 };

constexpr ErrorCategory category_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidArgument:
    case ErrorCode::CadenceMismatch:
      return ErrorCategory::Config;
    case ErrorCode::NonFiniteState:
    case ErrorCode::NonPositiveInnovationVariance:
    case ErrorCode::UnstableTruth:
    case ErrorCode::NoRealPrincipalRoot:
    case ErrorCode::SingularSystem:
      return ErrorCategory::Numerical;
    default:
      return ErrorCategory::Data;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace romda
