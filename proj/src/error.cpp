#include "mfe/error.hpp"

namespace mfe {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::RankDeficient: return "RankDeficient";
    case ErrorKind::NonConvergence: return "NonConvergence";
    case ErrorKind::NonFiniteEvaluation: return "NonFiniteEvaluation";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::DivisionByZero: return "DivisionByZero";
    case ErrorKind::ThetaSingularity: return "ThetaSingularity";
    case ErrorKind::Infeasible: return "Infeasible";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::InvariantViolation: return "InvariantViolation";
    case ErrorKind::CorrelatedFactors: return "CorrelatedFactors";
    case ErrorKind::DegenerateVariance: return "DegenerateVariance";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace mfe
