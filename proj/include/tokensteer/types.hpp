#pragma once

// Domain types shared by every module. All types validate their invariants on
// construction and are immutable afterwards.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tokensteer {

using Meta = std::map<std::string, std::string>;

enum class Role : std::uint8_t { Prompt = 0, Response = 1 };

enum class Method { SwFC, StTP, StMP, AlignedBaseline, MaliciousBaseline };

enum class Position { All, Response };

enum class VectorSource { LogReg, Caa };

enum class Winner { A, B };

std::string_view to_string(Role r) noexcept;
std::string_view to_string(Method m) noexcept;
std::string_view to_string(Position p) noexcept;
std::string_view to_string(VectorSource s) noexcept;
std::string_view to_string(Winner w) noexcept;

// Case-insensitive parsers; throw Error(InvalidArgument) on unknown names.
Method parse_method(std::string_view name);
Position parse_position(std::string_view name);
VectorSource parse_source(std::string_view name);
Winner parse_winner(std::string_view name);

inline bool is_baseline(Method m) noexcept {
  return m == Method::AlignedBaseline || m == Method::MaliciousBaseline;
}

/// Hidden states of one prompt/response at one layer, stored token-major.
///
/// `logprobs`, when present, has one entry per token; only RESPONSE entries
/// are meaningful (PROMPT slots are conventionally 0).
class ActivationTrace {
 public:
  ActivationTrace(int layer, std::size_t d_model, std::vector<double> hidden,
                  std::vector<Role> roles,
                  std::optional<std::vector<double>> logprobs = std::nullopt,
                  Meta meta = {});

  int layer() const noexcept { return layer_; }
  std::size_t d_model() const noexcept { return d_model_; }
  std::size_t n_tokens() const noexcept { return roles_.size(); }
  std::size_t n_response_tokens() const noexcept;

  std::span<const double> hidden() const noexcept { return hidden_; }
  std::span<const double> row(std::size_t token) const;
  std::span<const Role> roles() const noexcept { return roles_; }
  const std::optional<std::vector<double>>& logprobs() const noexcept { return logprobs_; }
  const Meta& meta() const noexcept { return meta_; }

  /// Logprobs of RESPONSE tokens, in order. Empty when absent.
  std::vector<double> response_logprobs() const;

  /// Same roles/logprobs/meta with a replaced hidden payload (re-validated).
  ActivationTrace with_hidden(std::vector<double> hidden) const;
  ActivationTrace with_meta(Meta meta) const;

  friend bool operator==(const ActivationTrace&, const ActivationTrace&) = default;

 private:
  int layer_;
  std::size_t d_model_;
  std::vector<double> hidden_;
  std::vector<Role> roles_;
  std::optional<std::vector<double>> logprobs_;
  Meta meta_;
};

/// Response-averaged embeddings of one scenario under both system prompts.
struct ContrastivePair {
  std::vector<double> positive;
  std::vector<double> negative;
  std::string scenario_id;
};

/// Validates a pair set: non-empty, shared finite dimension. Returns d_model.
std::size_t validate_pairs(std::span<const ContrastivePair> pairs);

struct RawClassifier {
  std::vector<double> weights;
  double bias = 0.0;
  double regularization_c = 1.0;
  bool converged = false;
  double final_gradient_norm = 0.0;
  int iterations = 0;
};

struct ProjectionStats {
  double mu_plus = 0.0;
  double sigma_plus = 0.0;
  double mu_minus = 0.0;
  double sigma_minus = 0.0;
  std::size_t n_plus = 0;
  std::size_t n_minus = 0;
  double cohen_d = 0.0;

  friend bool operator==(const ProjectionStats&, const ProjectionStats&) = default;
};

/// Unit direction plus the projection-space quantities the gated transforms
/// need. Construction checks every invariant and throws
/// Error(InvariantViolation) on failure.
class SteeringVector {
 public:
  static constexpr double kTolerance = 1e-9;

  SteeringVector(int layer, std::vector<double> direction, double delta_mu,
                 double bias_rescaled, double boundary, ProjectionStats stats,
                 std::string trait, VectorSource source, Meta meta = {});

  int layer() const noexcept { return layer_; }
  std::size_t d_model() const noexcept { return direction_.size(); }
  std::span<const double> direction() const noexcept { return direction_; }
  double delta_mu() const noexcept { return delta_mu_; }
  double bias_rescaled() const noexcept { return bias_rescaled_; }
  double boundary() const noexcept { return boundary_; }
  const ProjectionStats& stats() const noexcept { return stats_; }
  const std::string& trait() const noexcept { return trait_; }
  VectorSource source() const noexcept { return source_; }
  const Meta& meta() const noexcept { return meta_; }

  friend bool operator==(const SteeringVector&, const SteeringVector&) = default;

 private:
  int layer_;
  std::vector<double> direction_;
  double delta_mu_;
  double bias_rescaled_;
  double boundary_;
  ProjectionStats stats_;
  std::string trait_;
  VectorSource source_;
  Meta meta_;
};

/// One cell of a layer/coefficient sweep. Baseline rows carry no
/// layer/coefficient/position. Judge scores stay empty until merged in.
struct SweepRecord {
  Method method = Method::SwFC;
  std::optional<int> layer;
  std::optional<double> coefficient;
  std::optional<Position> position;
  std::optional<double> trait_mean;
  std::optional<double> trait_ci;
  std::optional<double> coherence_mean;
  std::optional<double> coherence_ci;

  friend bool operator==(const SweepRecord&, const SweepRecord&) = default;
};

void validate(const SweepRecord& r);

struct MatchRecord {
  std::string player_a;
  std::string player_b;
  Winner winner = Winner::A;
  std::string prompt_id;

  friend bool operator==(const MatchRecord&, const MatchRecord&) = default;
};

}  // namespace tokensteer
