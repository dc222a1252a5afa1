#pragma once

#include <stdexcept>
#include <string>

namespace mfe {

enum class ErrorKind {
  RankDeficient,
  NonConvergence,
  NonFiniteEvaluation,
  InsufficientData,
  DivisionByZero,
  ThetaSingularity,
  Infeasible,
  ParseError,
  InvariantViolation,
  CorrelatedFactors,
  DegenerateVariance,
  ShapeMismatch,
  InvalidArgument,
  Io,
};

const char* to_string(ErrorKind kind);

/// Base exception for every recoverable failure raised by the library.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace mfe
