#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tokensteer {

enum class ErrorCode {
  MagicMismatch,
  VersionUnsupported,
  TruncatedPayload,
  InvalidFormat,
  NonfiniteValue,
  IoFailure,
  SchemaMismatch,
  InvariantViolation,
  DimensionMismatch,
  EmptyInput,
  NotConverged,
  Degenerate,
  ZeroWeights,
  ZeroDeltaMu,
  ZeroVector,
  LayerMismatch,
  ZeroSigma,
  ShapeMismatch,
  EmptySequence,
  PositiveLogprob,
  MissingEmbedding,
  UnknownPlayer,
  NoFeasiblePoint,
  MissingInput,
  InvalidArgument,
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

}  // namespace tokensteer
