#pragma once

#include <stdexcept>
#include <string>

namespace mambarate {

// Stable error codes; the CLI maps a subset of these to process exit codes.
enum class ErrorCode {
  // embedding / manifest loading
  BadMagic,
  TruncatedFile,
  NonFiniteValue,
  ZeroDimension,
  MissingColumn,
  RatingOutOfRange,
  DuplicateListenerEntry,
  EmptyIdList,
  BadFractions,
  // rating codec
  OutOfRange,
  WrongDimension,
  // tensor / autograd
  ShapeMismatch,
  NonFiniteResult,
  NotScalarLoss,
  // training
  EmptyTrainSet,
  EmptyValSet,
  DivergedLoss,
  // metrics
  EmptyInput,
  ConstantInput,
  TooFewSamples,
  NoSystemIds,
  // cli
  ConfigError,
  DataError,
  DimMismatch,
  UnknownUtterance,
};

inline const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::ZeroDimension: return "ZeroDimension";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::RatingOutOfRange: return "RatingOutOfRange";
    case ErrorCode::DuplicateListenerEntry: return "DuplicateListenerEntry";
    case ErrorCode::EmptyIdList: return "EmptyIdList";
    case ErrorCode::BadFractions: return "BadFractions";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::WrongDimension: return "WrongDimension";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteResult: return "NonFiniteResult";
    case ErrorCode::NotScalarLoss: return "NotScalarLoss";
    case ErrorCode::EmptyTrainSet: return "EmptyTrainSet";
    case ErrorCode::EmptyValSet: return "EmptyValSet";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::ConstantInput: return "ConstantInput";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::NoSystemIds: return "NoSystemIds";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::DataError: return "DataError";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::UnknownUtterance: return "UnknownUtterance";
  }
  return "UnknownError";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(std::string(to_string(code)) + ": " + msg), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) {
  throw Error(code, msg);
}

}  // namespace mambarate
