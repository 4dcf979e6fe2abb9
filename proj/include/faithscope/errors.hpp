#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace faithscope {

enum class ErrorCode {
  InvalidArgument,
  UnencodableText,
  ShapeMismatch,
  PositionOutOfRange,
  BadMagic,
  TruncatedFile,
  IoError,
  NoPlaceholder,
  MultiplePlaceholders,
  NounNotFound,
  DuplicateNoun,
  SpanMismatch,
  AttributeNotTokenizable,
  DegenerateData,
  EmptyRange,
  InsufficientExemplars,
  EmptyRecords,
  SingularData,
  SeparationWarning,
  SingleClass,
  ConstantInput,
  LengthMismatch,
  TooFewGroups,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

#define FS_CHECK(cond, code, msg)                 \
  do {                                            \
    if (!(cond)) {                                \
      throw ::faithscope::Error((code), (msg));   \
    }                                             \
  } while (0)

}  // namespace faithscope
