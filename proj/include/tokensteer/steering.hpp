#pragma once

// Per-token steering transforms along a unit direction v with projection
// rho = <h, v>:
//
//   SWFC  h' = h + alpha * delta_mu * v                       (every token)
//   STTP  h' = h + (s - rho) * v,  s = mu+ + alpha * sigma+   (rho < m only)
//   STMP  h' = h + 2 alpha (m - rho) * v                      (rho < m only)
//
// Gating uses the strict inequality rho < m; tokens at the boundary are left
// alone. Offline (whole trace) and online (token feed) paths share Steerer.

#include <cstddef>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "tokensteer/types.hpp"

namespace tokensteer {

struct SteeringConfig {
  Method method = Method::SwFC;
  double coefficient = 0.0;
  Position position = Position::All;
  SteeringVector vector;

  void validate() const;
};

struct TokenReport {
  std::size_t index = 0;
  Role role = Role::Response;
  double rho_before = 0.0;
  double rho_after = 0.0;
  double delta_l2 = 0.0;  // ||h' - h||; perturbation is collinear with v
  bool steered = false;

  friend bool operator==(const TokenReport&, const TokenReport&) = default;
};

struct SteeringReport {
  std::size_t n_tokens_seen = 0;
  std::size_t n_tokens_steered = 0;
  std::vector<TokenReport> per_token;
};

/// StTP target projection mu+ + alpha * sigma+.
double sttp_target(const SteeringVector& vector, double alpha) noexcept;

std::vector<double> steer_swfc(std::span<const double> hidden, const SteeringVector& vector,
                               double alpha);
std::vector<double> steer_sttp(std::span<const double> hidden, const SteeringVector& vector,
                               double alpha);
std::vector<double> steer_stmp(std::span<const double> hidden, const SteeringVector& vector,
                               double alpha);

/// Compiled transform for one configuration.
class Steerer {
 public:
  explicit Steerer(SteeringConfig config);

  const SteeringConfig& config() const noexcept { return config_; }
  bool eligible(Role role) const noexcept {
    return config_.position == Position::All || role == Role::Response;
  }

  /// Shift along the direction for a token with projection `rho`, or 0 with
  /// `gated == false` when the transform leaves it untouched.
  double shift(double rho, bool& gated) const noexcept;

  /// Steers token-major `rows` in place. `first_index` numbers report entries.
  void apply(std::span<double> rows, std::span<const Role> roles, std::size_t first_index,
             SteeringReport& report) const;

 private:
  SteeringConfig config_;
  double target_ = 0.0;
};

/// Steers every eligible token of a recorded trace once. Tokens outside the
/// position mask come back bit-identical.
std::pair<ActivationTrace, SteeringReport> steer_stream(const ActivationTrace& trace,
                                                        const SteeringConfig& config);

/// Incremental token feed for live generation; one producer per stream.
class OnlineSteerer {
 public:
  explicit OnlineSteerer(SteeringConfig config) : steerer_(std::move(config)) {}

  std::vector<double> feed(std::span<const double> hidden, Role role);
  const SteeringReport& report() const noexcept { return report_; }

 private:
  Steerer steerer_;
  SteeringReport report_;
  std::size_t next_index_ = 0;
};

/// One JSON object per token.
void write_steering_report(const SteeringReport& report, const std::filesystem::path& path);

}  // namespace tokensteer
