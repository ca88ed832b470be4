#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace modelspace {

enum class ErrorKind {
  InvalidArgument,
  ShapeMismatch,
  NonFiniteValue,
  ParseError,
  ChecksumMismatch,
  UnsupportedChannels,
  IoError,
  DecodeError,
  EmptyProbe,
  BadSampleSize,
  UnitOutOfRange,
  ExactModeTooLarge,
  ProbeMismatch,
  MethodMismatch,
  UnknownModel,
  DegenerateSubspace,
  BadK,
  EmptyRelevant,
  ZeroVariance,
  IncompleteTable,
  IdMismatch,
  TooFewModels,
};

std::string_view to_string(ErrorKind kind);

/// All library failures are reported as Error; kind() identifies the
/// contract that was violated so callers (and the CLI) can branch on it.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace modelspace
