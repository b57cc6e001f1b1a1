#include "upmt/error.hpp"

namespace upmt {

std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::TruncatedChunk: return "TruncatedChunk";
    case ErrorCode::BadVariableLength: return "BadVariableLength";
    case ErrorCode::MalformedEvent: return "MalformedEvent";
    case ErrorCode::NoNotes: return "NoNotes";
    case ErrorCode::EmptyTrack: return "EmptyTrack";
    case ErrorCode::GrammarViolation: return "GrammarViolation";
    case ErrorCode::OutOfVocabulary: return "OutOfVocabulary";
    case ErrorCode::NoSelectedEvents: return "NoSelectedEvents";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::AllMasked: return "AllMasked";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NoRepeatedPattern: return "NoRepeatedPattern";
    case ErrorCode::VocabularyMismatch: return "VocabularyMismatch";
    case ErrorCode::BinMismatch: return "BinMismatch";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::HashMismatch: return "HashMismatch";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

ErrorClass error_class(ErrorCode code) {
  return code == ErrorCode::IoError ? ErrorClass::Io : ErrorClass::Domain;
}

}  // namespace upmt
