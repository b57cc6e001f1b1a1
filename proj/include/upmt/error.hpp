#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace upmt {

/// Every failure the library reports. Names match the error classes surfaced
/// by the CLI diagnostics.
enum class ErrorCode {
  // midi_io
  MalformedHeader,
  UnsupportedFormat,
  TruncatedChunk,
  BadVariableLength,
  MalformedEvent,
  NoNotes,
  // remi_codec
  EmptyTrack,
  GrammarViolation,
  OutOfVocabulary,
  // predictor
  NoSelectedEvents,
  LengthMismatch,
  NonFiniteLoss,
  AllMasked,
  InvalidArgument,
  // pattern
  NoRepeatedPattern,
  // transfer
  VocabularyMismatch,
  // metrics
  BinMismatch,
  TooShort,
  DegenerateInput,
  // storage
  ParseError,
  HashMismatch,
  VersionMismatch,
  IoError,
};

std::string_view error_name(ErrorCode code);

/// Broad class of an error, used for process exit codes.
enum class ErrorClass { Io, Domain };

ErrorClass error_class(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace upmt
