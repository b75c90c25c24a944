#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ckd {

enum class ErrorKind {
  MissingRoot,
  EmptyClass,
  UnreadableImage,
  IndexOutOfRange,
  DegenerateClass,
  InvalidConfig,
  DecodeError,
  WeightsUnavailable,
  UnsupportedInputSize,
  ShapeMismatch,
  DimMismatch,
  NonFiniteLoss,
  StreamExhausted,
  LengthMismatch,
  SingleClass,
  SingularSystem,
  MissingPrerequisite,
  MissingCheckpoint,
  Usage,
  Io,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// CLI exit codes: 0 success, 2 usage/config, 3 missing prerequisite, 4 runtime.
int exit_code_for(ErrorKind kind);

}  // namespace ckd
