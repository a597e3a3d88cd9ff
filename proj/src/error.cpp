#include "visitrisk/error.hpp"

namespace visitrisk {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kBadHeader: return "BadHeader";
    case ErrorKind::kMissingField: return "MissingField";
    case ErrorKind::kMalformedField: return "MalformedField";
    case ErrorKind::kUnknownCategoryLevel: return "UnknownCategoryLevel";
    case ErrorKind::kCcsOutOfRange: return "CcsOutOfRange";
    case ErrorKind::kDuplicatePatientSeq: return "DuplicatePatientSeq";
    case ErrorKind::kInvariantViolation: return "InvariantViolation";
    case ErrorKind::kSpecError: return "SpecError";
    case ErrorKind::kTooFewRows: return "TooFewRows";
    case ErrorKind::kWidthMismatch: return "WidthMismatch";
    case ErrorKind::kDegenerateSplit: return "DegenerateSplit";
    case ErrorKind::kSingleClass: return "SingleClass";
    case ErrorKind::kShapeMismatch: return "ShapeMismatch";
    case ErrorKind::kBadMagic: return "BadMagic";
    case ErrorKind::kShapeCorruption: return "ShapeCorruption";
    case ErrorKind::kEmptySet: return "EmptySet";
    case ErrorKind::kDivergenceDetected: return "DivergenceDetected";
    case ErrorKind::kInvalidConfig: return "InvalidConfig";
    case ErrorKind::kLengthMismatch: return "LengthMismatch";
    case ErrorKind::kUnachievable: return "Unachievable";
    case ErrorKind::kConfigError: return "ConfigError";
    case ErrorKind::kStageInputMissing: return "StageInputMissing";
    case ErrorKind::kIo: return "IoError";
  }
  return "Error";
}

}  // namespace visitrisk
