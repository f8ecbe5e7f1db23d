#include "tokensteer/error.hpp"

namespace tokensteer {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MagicMismatch: return "MAGIC_MISMATCH";
    case ErrorCode::VersionUnsupported: return "VERSION_UNSUPPORTED";
    case ErrorCode::TruncatedPayload: return "TRUNCATED_PAYLOAD";
    case ErrorCode::InvalidFormat: return "INVALID_FORMAT";
    case ErrorCode::NonfiniteValue: return "NONFINITE_VALUE";
    case ErrorCode::IoFailure: return "IO_FAILURE";
    case ErrorCode::SchemaMismatch: return "SCHEMA_MISMATCH";
    case ErrorCode::InvariantViolation: return "INVARIANT_VIOLATION";
    case ErrorCode::DimensionMismatch: return "DIMENSION_MISMATCH";
    case ErrorCode::EmptyInput: return "EMPTY_INPUT";
    case ErrorCode::NotConverged: return "NOT_CONVERGED";
    case ErrorCode::Degenerate: return "DEGENERATE";
    case ErrorCode::ZeroWeights: return "ZERO_WEIGHTS";
    case ErrorCode::ZeroDeltaMu: return "ZERO_DELTA_MU";
    case ErrorCode::ZeroVector: return "ZERO_VECTOR";
    case ErrorCode::LayerMismatch: return "LAYER_MISMATCH";
    case ErrorCode::ZeroSigma: return "ZERO_SIGMA";
    case ErrorCode::ShapeMismatch: return "SHAPE_MISMATCH";
    case ErrorCode::EmptySequence: return "EMPTY_SEQUENCE";
    case ErrorCode::PositiveLogprob: return "POSITIVE_LOGPROB";
    case ErrorCode::MissingEmbedding: return "MISSING_EMBEDDING";
    case ErrorCode::UnknownPlayer: return "UNKNOWN_PLAYER";
    case ErrorCode::NoFeasiblePoint: return "NO_FEASIBLE_POINT";
    case ErrorCode::MissingInput: return "MISSING_INPUT";
    case ErrorCode::InvalidArgument: return "INVALID_ARGUMENT";
  }
  return "UNKNOWN";
}

}  // namespace tokensteer
