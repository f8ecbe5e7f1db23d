#include "tokensteer/types.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "tokensteer/error.hpp"

namespace tokensteer {
namespace {

std::string upper(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

bool near(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max(1.0, std::max(std::abs(a), std::abs(b)));
}

bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

std::string_view to_string(Role r) noexcept {
  return r == Role::Prompt ? "PROMPT" : "RESPONSE";
}

std::string_view to_string(Method m) noexcept {
  switch (m) {
    case Method::SwFC: return "SWFC";
    case Method::StTP: return "STTP";
    case Method::StMP: return "STMP";
    case Method::AlignedBaseline: return "ALIGNED_BASELINE";
    case Method::MaliciousBaseline: return "MALICIOUS_BASELINE";
  }
  return "?";
}

std::string_view to_string(Position p) noexcept {
  return p == Position::All ? "ALL" : "RESPONSE";
}

std::string_view to_string(VectorSource s) noexcept {
  return s == VectorSource::LogReg ? "LOGREG" : "CAA";
}

std::string_view to_string(Winner w) noexcept { return w == Winner::A ? "A" : "B"; }

Method parse_method(std::string_view name) {
  const auto u = upper(name);
  if (u == "SWFC") return Method::SwFC;
  if (u == "STTP") return Method::StTP;
  if (u == "STMP") return Method::StMP;
  if (u == "ALIGNED_BASELINE" || u == "ALIGNED") return Method::AlignedBaseline;
  if (u == "MALICIOUS_BASELINE" || u == "MALICIOUS") return Method::MaliciousBaseline;
  throw Error(ErrorCode::InvalidArgument, "unknown method '" + std::string(name) + "'");
}

Position parse_position(std::string_view name) {
  const auto u = upper(name);
  if (u == "ALL") return Position::All;
  if (u == "RESPONSE" || u == "RESP") return Position::Response;
  throw Error(ErrorCode::InvalidArgument, "unknown position '" + std::string(name) + "'");
}

VectorSource parse_source(std::string_view name) {
  const auto u = upper(name);
  if (u == "LOGREG") return VectorSource::LogReg;
  if (u == "CAA") return VectorSource::Caa;
  throw Error(ErrorCode::InvalidArgument, "unknown source '" + std::string(name) + "'");
}

Winner parse_winner(std::string_view name) {
  const auto u = upper(name);
  if (u == "A") return Winner::A;
  if (u == "B") return Winner::B;
  throw Error(ErrorCode::InvalidArgument, "unsupported winner '" + std::string(name) +
                                              "' (ties are not modeled)");
}

// ---------------------------------------------------------------------------

ActivationTrace::ActivationTrace(int layer, std::size_t d_model, std::vector<double> hidden,
                                 std::vector<Role> roles,
                                 std::optional<std::vector<double>> logprobs, Meta meta)
    : layer_(layer),
      d_model_(d_model),
      hidden_(std::move(hidden)),
      roles_(std::move(roles)),
      logprobs_(std::move(logprobs)),
      meta_(std::move(meta)) {
  if (layer_ < 0) throw Error(ErrorCode::InvariantViolation, "negative layer index");
  if (d_model_ == 0) throw Error(ErrorCode::InvariantViolation, "d_model must be positive");
  if (roles_.empty()) throw Error(ErrorCode::InvariantViolation, "trace has no tokens");
  if (hidden_.size() != roles_.size() * d_model_)
    throw Error(ErrorCode::DimensionMismatch, "hidden payload is not n_tokens x d_model");
  if (!all_finite(hidden_)) throw Error(ErrorCode::NonfiniteValue, "hidden state component");
  for (Role r : roles_) {
    if (r != Role::Prompt && r != Role::Response)
      throw Error(ErrorCode::InvariantViolation, "bad role byte");
  }
  if (logprobs_) {
    if (logprobs_->size() != roles_.size())
      throw Error(ErrorCode::DimensionMismatch, "logprob block must have one slot per token");
    if (!all_finite(*logprobs_)) throw Error(ErrorCode::NonfiniteValue, "logprob");
    for (double lp : *logprobs_) {
      if (lp > 0.0) throw Error(ErrorCode::PositiveLogprob, "logprob must be <= 0");
    }
  }
  if (auto it = meta_.find("turn_index"); it != meta_.end()) {
    const auto& s = it->second;
    if (s.empty() || !std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); }))
      throw Error(ErrorCode::InvariantViolation, "turn_index must be a non-negative integer");
  }
}

std::size_t ActivationTrace::n_response_tokens() const noexcept {
  return static_cast<std::size_t>(std::count(roles_.begin(), roles_.end(), Role::Response));
}

std::span<const double> ActivationTrace::row(std::size_t token) const {
  if (token >= n_tokens()) throw Error(ErrorCode::InvalidArgument, "token index out of range");
  return std::span<const double>(hidden_).subspan(token * d_model_, d_model_);
}

std::vector<double> ActivationTrace::response_logprobs() const {
  std::vector<double> out;
  if (!logprobs_) return out;
  for (std::size_t t = 0; t < roles_.size(); ++t) {
    if (roles_[t] == Role::Response) out.push_back((*logprobs_)[t]);
  }
  return out;
}

ActivationTrace ActivationTrace::with_hidden(std::vector<double> hidden) const {
  return ActivationTrace(layer_, d_model_, std::move(hidden), roles_, logprobs_, meta_);
}

ActivationTrace ActivationTrace::with_meta(Meta meta) const {
  return ActivationTrace(layer_, d_model_, hidden_, roles_, logprobs_, std::move(meta));
}

std::size_t validate_pairs(std::span<const ContrastivePair> pairs) {
  if (pairs.empty()) throw Error(ErrorCode::EmptyInput, "no contrastive pairs");
  const std::size_t d = pairs.front().positive.size();
  if (d == 0) throw Error(ErrorCode::DimensionMismatch, "zero-length embedding");
  for (const auto& p : pairs) {
    if (p.positive.size() != d || p.negative.size() != d)
      throw Error(ErrorCode::DimensionMismatch,
                  "pair '" + p.scenario_id + "' does not match d_model " + std::to_string(d));
    if (!all_finite(p.positive) || !all_finite(p.negative))
      throw Error(ErrorCode::NonfiniteValue, "pair '" + p.scenario_id + "'");
  }
  return d;
}

// ---------------------------------------------------------------------------

SteeringVector::SteeringVector(int layer, std::vector<double> direction, double delta_mu,
                               double bias_rescaled, double boundary, ProjectionStats stats,
                               std::string trait, VectorSource source, Meta meta)
    : layer_(layer),
      direction_(std::move(direction)),
      delta_mu_(delta_mu),
      bias_rescaled_(bias_rescaled),
      boundary_(boundary),
      stats_(stats),
      trait_(std::move(trait)),
      source_(source),
      meta_(std::move(meta)) {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvariantViolation, what); };
  if (layer_ < 0) fail("negative layer");
  if (direction_.empty()) fail("empty direction");
  if (!all_finite(direction_)) throw Error(ErrorCode::NonfiniteValue, "direction component");
  const double scalars[] = {delta_mu_,        bias_rescaled_,    boundary_,
                            stats_.mu_plus,   stats_.sigma_plus, stats_.mu_minus,
                            stats_.sigma_minus, stats_.cohen_d};
  if (!all_finite(scalars)) throw Error(ErrorCode::NonfiniteValue, "steering vector scalar");
  const double sq = std::inner_product(direction_.begin(), direction_.end(), direction_.begin(), 0.0);
  if (std::abs(std::sqrt(sq) - 1.0) > kTolerance) fail("direction is not unit norm");
  if (stats_.sigma_plus < 0.0 || stats_.sigma_minus < 0.0) fail("negative sigma");
  if (stats_.n_plus == 0 || stats_.n_minus == 0) fail("empty class count");
  if (!near(delta_mu_, stats_.mu_plus - stats_.mu_minus, kTolerance))
    fail("delta_mu != mu_plus - mu_minus");
  if (delta_mu_ == 0.0) throw Error(ErrorCode::ZeroDeltaMu, "delta_mu is zero");
  if (!near(boundary_, -bias_rescaled_ / std::abs(delta_mu_), kTolerance))
    fail("boundary != -bias_rescaled / |delta_mu|");
}

void validate(const SweepRecord& r) {
  auto in_range = [](const std::optional<double>& v) { return !v || (*v >= 0.0 && *v <= 100.0); };
  auto non_negative = [](const std::optional<double>& v) { return !v || *v >= 0.0; };
  if (!in_range(r.trait_mean) || !in_range(r.coherence_mean))
    throw Error(ErrorCode::InvariantViolation, "score outside [0, 100]");
  if (!non_negative(r.trait_ci) || !non_negative(r.coherence_ci))
    throw Error(ErrorCode::InvariantViolation, "negative confidence interval");
  if (!is_baseline(r.method) && (!r.layer || !r.coefficient || !r.position))
    throw Error(ErrorCode::SchemaMismatch, "steered sweep row needs layer, coefficient, position");
  if (r.coefficient && !std::isfinite(*r.coefficient))
    throw Error(ErrorCode::NonfiniteValue, "coefficient");
}

}  // namespace tokensteer
