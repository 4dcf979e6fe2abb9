#include "faithscope/errors.hpp"

namespace faithscope {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::UnencodableText: return "UnencodableText";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::PositionOutOfRange: return "PositionOutOfRange";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::NoPlaceholder: return "NoPlaceholder";
    case ErrorCode::MultiplePlaceholders: return "MultiplePlaceholders";
    case ErrorCode::NounNotFound: return "NounNotFound";
    case ErrorCode::DuplicateNoun: return "DuplicateNoun";
    case ErrorCode::SpanMismatch: return "SpanMismatch";
    case ErrorCode::AttributeNotTokenizable: return "AttributeNotTokenizable";
    case ErrorCode::DegenerateData: return "DegenerateData";
    case ErrorCode::EmptyRange: return "EmptyRange";
    case ErrorCode::InsufficientExemplars: return "InsufficientExemplars";
    case ErrorCode::EmptyRecords: return "EmptyRecords";
    case ErrorCode::SingularData: return "SingularData";
    case ErrorCode::SeparationWarning: return "SeparationWarning";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::ConstantInput: return "ConstantInput";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::TooFewGroups: return "TooFewGroups";
  }
  return "Unknown";
}

}  // namespace faithscope
