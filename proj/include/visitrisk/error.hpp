#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace visitrisk {

enum class ErrorKind {
  // schema
  kBadHeader,
  kMissingField,
  kMalformedField,
  kUnknownCategoryLevel,
  kCcsOutOfRange,
  kDuplicatePatientSeq,
  kInvariantViolation,
  kSpecError,
  // encode
  kTooFewRows,
  kWidthMismatch,
  // resample
  kDegenerateSplit,
  kSingleClass,
  // mlp / train
  kShapeMismatch,
  kBadMagic,
  kShapeCorruption,
  kEmptySet,
  kDivergenceDetected,
  kInvalidConfig,
  // eval
  kLengthMismatch,
  // synth
  kUnachievable,
  // pipeline
  kConfigError,
  kStageInputMissing,
  kIo,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library carries a category so the CLI can map it
// to an exit code without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace visitrisk
