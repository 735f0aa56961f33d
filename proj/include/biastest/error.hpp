#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace biastest {

enum class ErrorCode {
  // specs
  EmptyGroup,
  UnequalGroupLengths,
  DuplicateTerm,
  AmbiguousTerm,
  EmptyTerm,
  EmptyAttribute,
  UnknownTerm,
  // genpipeline
  TermNotInSentence,
  ChatBackendUnavailable,
  SwapProducedIdenticalText,
  CounterpartMissingInRewrite,
  MalformedTemplate,
  UnparseableReply,
  InvalidConfig,
  // scorers
  BackendUnavailable,
  UnknownSentence,
  // metrics
  MissingPairedText,
  EmptyPairSet,
  DegenerateVariance,
  SampleTooSmall,
  LengthMismatch,
  // textquality
  EmptyDataset,
  EmptyText,
  // datastore
  IoError,
  SchemaViolation,
  SpecMismatch,
  NotFound,
};

inline constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyGroup: return "EmptyGroup";
    case ErrorCode::UnequalGroupLengths: return "UnequalGroupLengths";
    case ErrorCode::DuplicateTerm: return "DuplicateTerm";
    case ErrorCode::AmbiguousTerm: return "AmbiguousTerm";
    case ErrorCode::EmptyTerm: return "EmptyTerm";
    case ErrorCode::EmptyAttribute: return "EmptyAttribute";
    case ErrorCode::UnknownTerm: return "UnknownTerm";
    case ErrorCode::TermNotInSentence: return "TermNotInSentence";
    case ErrorCode::ChatBackendUnavailable: return "ChatBackendUnavailable";
    case ErrorCode::SwapProducedIdenticalText: return "SwapProducedIdenticalText";
    case ErrorCode::CounterpartMissingInRewrite: return "CounterpartMissingInRewrite";
    case ErrorCode::MalformedTemplate: return "MalformedTemplate";
    case ErrorCode::UnparseableReply: return "UnparseableReply";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::BackendUnavailable: return "BackendUnavailable";
    case ErrorCode::UnknownSentence: return "UnknownSentence";
    case ErrorCode::MissingPairedText: return "MissingPairedText";
    case ErrorCode::EmptyPairSet: return "EmptyPairSet";
    case ErrorCode::DegenerateVariance: return "DegenerateVariance";
    case ErrorCode::SampleTooSmall: return "SampleTooSmall";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::EmptyText: return "EmptyText";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::SpecMismatch: return "SpecMismatch";
    case ErrorCode::NotFound: return "NotFound";
  }
  return "Unknown";
}

/// Base exception for every failure raised by the library. The message is
/// prefixed with the error code name so CLI diagnostics stay greppable.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// True for failures caused by an unreachable chat/scorer/classifier service.
inline bool is_backend_failure(ErrorCode code) {
  return code == ErrorCode::ChatBackendUnavailable || code == ErrorCode::BackendUnavailable;
}

}  // namespace biastest
