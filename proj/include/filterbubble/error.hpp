#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace filterbubble {

enum class ErrorCode {
  // data
  MalformedRecord,
  DanglingReference,
  DuplicateId,
  UnknownChannel,
  UnknownSeed,
  EmptySample,
  SchemaMismatch,
  IoError,
  EmptyVocabulary,
  LabelingIncomplete,
  MissingTopic,
  UnknownCategory,
  StaleUpstream,
  // numerical
  ConvergenceFailure,
  InvalidTopicCount,
  NonFiniteValue,
  DimensionMismatch,
  IndexOutOfRange,
  DegenerateMatrix,
  EmptyGrid,
  // configuration
  ConfigInvalid,
};

enum class ErrorClass { Config, Data, Numerical };

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::DanglingReference: return "DanglingReference";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::UnknownChannel: return "UnknownChannel";
    case ErrorCode::UnknownSeed: return "UnknownSeed";
    case ErrorCode::EmptySample: return "EmptySample";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::EmptyVocabulary: return "EmptyVocabulary";
    case ErrorCode::LabelingIncomplete: return "LabelingIncomplete";
    case ErrorCode::MissingTopic: return "MissingTopic";
    case ErrorCode::UnknownCategory: return "UnknownCategory";
    case ErrorCode::StaleUpstream: return "StaleUpstream";
    case ErrorCode::ConvergenceFailure: return "ConvergenceFailure";
    case ErrorCode::InvalidTopicCount: return "InvalidTopicCount";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::DegenerateMatrix: return "DegenerateMatrix";
    case ErrorCode::EmptyGrid: return "EmptyGrid";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
  }
  return "Unknown";
}

constexpr ErrorClass error_class(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigInvalid:
      return ErrorClass::Config;
    case ErrorCode::ConvergenceFailure:
    case ErrorCode::InvalidTopicCount:
    case ErrorCode::NonFiniteValue:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::IndexOutOfRange:
    case ErrorCode::DegenerateMatrix:
    case ErrorCode::EmptyGrid:
      return ErrorClass::Numerical;
    default:
      return ErrorClass::Data;
  }
}

/// Every failure raised by the library. The code identifies the contract
/// violation; the message carries the offending id, line or field.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  ErrorClass error_class() const noexcept { return filterbubble::error_class(code_); }

 private:
  ErrorCode code_;
};

/// Process exit status for the CLI: 2 config, 3 data, 4 numerical.
inline int exit_code_for(const Error& e) {
  switch (e.error_class()) {
    case ErrorClass::Config: return 2;
    case ErrorClass::Data: return 3;
    case ErrorClass::Numerical: return 4;
  }
  return 1;
}

}  // namespace filterbubble
