#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cue {

enum class ErrorCode {
  // input errors (exit 2)
  MissingFile,
  MalformedHeader,
  UnsupportedDtype,
  TruncatedPayload,
  InconsistentShapes,
  NegativeActivations,
  InvalidProbabilities,
  InvalidSpec,
  InvalidConfig,
  InvalidFlags,
  EmptyFlagSet,
  MissingTruthFlags,
  MissingGroupAttr,
  ConceptOutOfRange,
  MissingRunArtifacts,
  // computation errors (exit 1)
  IoFailure,
  EmptySamples,
  DimensionMismatch,
  DegenerateData,
  NotEnoughData,
  RankTooHigh,
  EmptyInput,
  EmptyItem,
  NonFiniteEvaluation,
  EmptyGroup,
  TooFewPairs,
  ConstantInput,
  AddrInUse,
};

constexpr std::string_view to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::UnsupportedDtype: return "UnsupportedDtype";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::InconsistentShapes: return "InconsistentShapes";
    case ErrorCode::NegativeActivations: return "NegativeActivations";
    case ErrorCode::InvalidProbabilities: return "InvalidProbabilities";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidFlags: return "InvalidFlags";
    case ErrorCode::EmptyFlagSet: return "EmptyFlagSet";
    case ErrorCode::MissingTruthFlags: return "MissingTruthFlags";
    case ErrorCode::MissingGroupAttr: return "MissingGroupAttr";
    case ErrorCode::ConceptOutOfRange: return "ConceptOutOfRange";
    case ErrorCode::MissingRunArtifacts: return "MissingRunArtifacts";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::EmptySamples: return "EmptySamples";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DegenerateData: return "DegenerateData";
    case ErrorCode::NotEnoughData: return "NotEnoughData";
    case ErrorCode::RankTooHigh: return "RankTooHigh";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::EmptyItem: return "EmptyItem";
    case ErrorCode::NonFiniteEvaluation: return "NonFiniteEvaluation";
    case ErrorCode::EmptyGroup: return "EmptyGroup";
    case ErrorCode::TooFewPairs: return "TooFewPairs";
    case ErrorCode::ConstantInput: return "ConstantInput";
    case ErrorCode::AddrInUse: return "AddrInUse";
  }
  return "Unknown";
}

/// Process exit code for a failure: 2 for bad input, 1 for computation errors.
constexpr int exit_code(ErrorCode c) {
  return c <= ErrorCode::MissingRunArtifacts ? 2 : 1;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool cond, ErrorCode code, const std::string& message) {
  if (!cond) throw Error(code, message);
}

}  // namespace cue
