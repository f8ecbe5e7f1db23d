#include "tokensteer/steering.hpp"

#include <cmath>

#include "json.hpp"
#include "tokensteer/error.hpp"
#include "tokensteer/io.hpp"
#include "tokensteer/kernels.hpp"

namespace tokensteer {
namespace {

std::vector<double> steer_one(std::span<const double> hidden, const SteeringVector& vector,
                              Method method, double alpha) {
  Steerer steerer(SteeringConfig{method, alpha, Position::All, vector});
  std::vector<double> out(hidden.begin(), hidden.end());
  const Role role = Role::Response;
  SteeringReport scratch;
  steerer.apply(out, std::span<const Role>(&role, 1), 0, scratch);
  return out;
}

}  // namespace

void SteeringConfig::validate() const {
  if (is_baseline(method)) throw Error(ErrorCode::InvalidArgument, "baselines are not steering methods");
  if (!std::isfinite(coefficient)) throw Error(ErrorCode::NonfiniteValue, "steering coefficient");
  if (method == Method::StTP && !std::isfinite(sttp_target(vector, coefficient)))
    throw Error(ErrorCode::InvalidArgument, "STTP target projection is not finite");
  if (method == Method::StMP && coefficient < 0.0)
    throw Error(ErrorCode::InvalidArgument, "STMP coefficient must be >= 0");
}

double sttp_target(const SteeringVector& vector, double alpha) noexcept {
  return vector.stats().mu_plus + alpha * vector.stats().sigma_plus;
}

Steerer::Steerer(SteeringConfig config) : config_(std::move(config)) {
  config_.validate();
  target_ = sttp_target(config_.vector, config_.coefficient);
}

double Steerer::shift(double rho, bool& gated) const noexcept {
  const double alpha = config_.coefficient;
  const double m = config_.vector.boundary();
  switch (config_.method) {
    case Method::SwFC:
      gated = true;
      return alpha * config_.vector.delta_mu();
    case Method::StTP:
      gated = rho < m;
      return gated ? target_ - rho : 0.0;
    case Method::StMP:
      gated = rho < m;
      return gated ? 2.0 * alpha * (m - rho) : 0.0;
    default:
      gated = false;
      return 0.0;
  }
}

void Steerer::apply(std::span<double> rows, std::span<const Role> roles, std::size_t first_index,
                    SteeringReport& report) const {
  const std::size_t d = config_.vector.d_model();
  const std::size_t n = roles.size();
  if (rows.size() != n * d)
    throw Error(ErrorCode::DimensionMismatch, "hidden rows do not match steering vector d_model");
  const auto dir = config_.vector.direction();

  std::vector<double> rho(n), shifts(n, 0.0);
  std::vector<char> steered(n, 0);
  kernels::project_rows(rows, d, dir, rho);
  for (std::size_t t = 0; t < n; ++t) {
    if (!eligible(roles[t])) continue;
    bool gated = false;
    shifts[t] = shift(rho[t], gated);
    steered[t] = gated ? 1 : 0;
  }
  // Update steered rows only, in maximal runs.
  for (std::size_t t = 0; t < n;) {
    if (!steered[t]) {
      ++t;
      continue;
    }
    std::size_t end = t;
    while (end < n && steered[end]) ++end;
    kernels::add_scaled_direction(rows.subspan(t * d, (end - t) * d), d, dir,
                                  std::span<const double>(shifts).subspan(t, end - t));
    t = end;
  }
  std::vector<double> rho_after(n);
  kernels::project_rows(rows, d, dir, rho_after);

  report.n_tokens_seen += n;
  for (std::size_t t = 0; t < n; ++t) {
    if (steered[t]) ++report.n_tokens_steered;
    report.per_token.push_back(TokenReport{first_index + t, roles[t], rho[t],
                                           steered[t] ? rho_after[t] : rho[t],
                                           steered[t] ? std::abs(shifts[t]) : 0.0, steered[t] != 0});
  }
}

std::vector<double> steer_swfc(std::span<const double> hidden, const SteeringVector& vector,
                               double alpha) {
  return steer_one(hidden, vector, Method::SwFC, alpha);
}

std::vector<double> steer_sttp(std::span<const double> hidden, const SteeringVector& vector,
                               double alpha) {
  return steer_one(hidden, vector, Method::StTP, alpha);
}

std::vector<double> steer_stmp(std::span<const double> hidden, const SteeringVector& vector,
                               double alpha) {
  return steer_one(hidden, vector, Method::StMP, alpha);
}

std::pair<ActivationTrace, SteeringReport> steer_stream(const ActivationTrace& trace,
                                                        const SteeringConfig& config) {
  if (trace.layer() != config.vector.layer())
    throw Error(ErrorCode::LayerMismatch, "trace layer " + std::to_string(trace.layer()) +
                                              " != steering vector layer " +
                                              std::to_string(config.vector.layer()));
  if (trace.d_model() != config.vector.d_model())
    throw Error(ErrorCode::DimensionMismatch, "trace d_model != steering vector d_model");
  const Steerer steerer(config);
  std::vector<double> rows(trace.hidden().begin(), trace.hidden().end());
  SteeringReport report;
  report.per_token.reserve(trace.n_tokens());
  steerer.apply(rows, trace.roles(), 0, report);
  return {trace.with_hidden(std::move(rows)), std::move(report)};
}

std::vector<double> OnlineSteerer::feed(std::span<const double> hidden, Role role) {
  if (hidden.size() != steerer_.config().vector.d_model())
    throw Error(ErrorCode::DimensionMismatch, "fed hidden state has wrong d_model");
  std::vector<double> out(hidden.begin(), hidden.end());
  steerer_.apply(out, std::span<const Role>(&role, 1), next_index_++, report_);
  return out;
}

void write_steering_report(const SteeringReport& report, const std::filesystem::path& path) {
  std::vector<nlohmann::json> rows;
  rows.reserve(report.per_token.size());
  for (const auto& t : report.per_token) {
    rows.push_back({{"index", t.index},
                    {"role", std::string(to_string(t.role))},
                    {"rho_before", t.rho_before},
                    {"rho_after", t.rho_after},
                    {"delta_l2", t.delta_l2},
                    {"steered", t.steered}});
  }
  io::write_jsonl(rows, path);
}

}  // namespace tokensteer
