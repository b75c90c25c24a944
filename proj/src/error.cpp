#include "ckd/error.hpp"

namespace ckd {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingRoot: return "MissingRoot";
    case ErrorKind::EmptyClass: return "EmptyClass";
    case ErrorKind::UnreadableImage: return "UnreadableImage";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::DegenerateClass: return "DegenerateClass";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::DecodeError: return "DecodeError";
    case ErrorKind::WeightsUnavailable: return "WeightsUnavailable";
    case ErrorKind::UnsupportedInputSize: return "UnsupportedInputSize";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::DimMismatch: return "DimMismatch";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::StreamExhausted: return "StreamExhausted";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::SingleClass: return "SingleClass";
    case ErrorKind::SingularSystem: return "SingularSystem";
    case ErrorKind::MissingPrerequisite: return "MissingPrerequisite";
    case ErrorKind::MissingCheckpoint: return "MissingCheckpoint";
    case ErrorKind::Usage: return "Usage";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage:
    case ErrorKind::InvalidConfig:
    case ErrorKind::MissingRoot:
    case ErrorKind::IndexOutOfRange:
    case ErrorKind::UnsupportedInputSize:
      return 2;
    case ErrorKind::MissingPrerequisite:
    case ErrorKind::MissingCheckpoint:
    case ErrorKind::WeightsUnavailable:
      return 3;
    default:
      return 4;
  }
}

}  // namespace ckd
