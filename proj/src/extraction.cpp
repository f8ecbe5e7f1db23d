#include "tokensteer/extraction.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <sstream>

#include "tokensteer/error.hpp"
#include "tokensteer/kernels.hpp"

namespace tokensteer {
namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) acc += a[k] * b[k];
  return acc;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void check_unit(std::span<const double> v, const char* what) {
  if (std::abs(norm(v) - 1.0) > SteeringVector::kTolerance)
    throw Error(ErrorCode::InvalidArgument, std::string(what) + " is not a unit vector");
}

std::string format_double(double x) {
  std::ostringstream ss;
  ss.precision(17);
  ss << x;
  return ss.str();
}

double softplus(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); }

double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

// Labeled design matrix: positives first, then negatives.
class LogisticObjective {
 public:
  LogisticObjective(std::span<const ContrastivePair> pairs, double c)
      : dim_(pairs.front().positive.size()), c_(c) {
    const std::size_t n = pairs.size();
    x_.reserve(2 * n * dim_);
    for (const auto& p : pairs) x_.insert(x_.end(), p.positive.begin(), p.positive.end());
    for (const auto& p : pairs) x_.insert(x_.end(), p.negative.begin(), p.negative.end());
    y_.assign(2 * n, -1.0);
    std::fill(y_.begin(), y_.begin() + static_cast<std::ptrdiff_t>(n), 1.0);
    z_.resize(2 * n);
  }

  std::size_t n_params() const { return dim_ + 1; }

  // theta = (w, b). Returns J and writes its gradient.
  double evaluate(std::span<const double> theta, std::span<double> grad) {
    const auto w = theta.first(dim_);
    const double b = theta[dim_];
    kernels::project_rows(x_, dim_, w, z_);
    double loss = 0.0;
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < y_.size(); ++i) {
      const double margin = y_[i] * (z_[i] + b);
      loss += softplus(-margin);
      // d/dz log(1 + exp(-y z)) = -y * sigmoid(-y z)
      const double coeff = -c_ * y_[i] * sigmoid(-margin);
      const double* row = x_.data() + i * dim_;
      for (std::size_t k = 0; k < dim_; ++k) grad[k] += coeff * row[k];
      grad[dim_] += coeff;
    }
    for (std::size_t k = 0; k < dim_; ++k) grad[k] += w[k];
    return 0.5 * dot(w, w) + c_ * loss;
  }

 private:
  std::size_t dim_;
  double c_;
  std::vector<double> x_;
  std::vector<double> y_;
  std::vector<double> z_;
};

struct LineSearchResult {
  bool ok = false;
  double step = 0.0;
  double value = 0.0;
};

// Strong-Wolfe line search (bracketing + zoom with safeguarded cubic steps).
class WolfeLineSearch {
 public:
  WolfeLineSearch(LogisticObjective& f, std::span<const double> x, std::span<const double> dir)
      : f_(f), x_(x), dir_(dir), trial_(x.size()), grad_(x.size()) {}

  LineSearchResult run(double f0, double slope0, double step, std::vector<double>& x_out,
                       std::vector<double>& g_out) {
    constexpr double kC1 = 1e-4;
    constexpr double kC2 = 0.9;
    constexpr int kMaxEvals = 60;
    double prev_step = 0.0;
    double prev_value = f0;
    double prev_slope = slope0;
    for (int it = 0; it < kMaxEvals; ++it) {
      const auto [value, slope] = eval(step);
      if (value > f0 + kC1 * step * slope0 || (it > 0 && value >= prev_value)) {
        return zoom(f0, slope0, prev_step, prev_value, prev_slope, step, value, slope, x_out, g_out);
      }
      if (std::abs(slope) <= -kC2 * slope0) return accept(step, value, x_out, g_out);
      if (slope >= 0.0) {
        return zoom(f0, slope0, step, value, slope, prev_step, prev_value, prev_slope, x_out, g_out);
      }
      prev_step = step;
      prev_value = value;
      prev_slope = slope;
      step *= 2.0;
    }
    return {};
  }

 private:
  std::pair<double, double> eval(double step) {
    for (std::size_t i = 0; i < x_.size(); ++i) trial_[i] = x_[i] + step * dir_[i];
    const double value = f_.evaluate(trial_, grad_);
    return {value, dot(grad_, dir_)};
  }

  LineSearchResult accept(double step, double value, std::vector<double>& x_out,
                          std::vector<double>& g_out) {
    x_out = trial_;
    g_out = grad_;
    return {true, step, value};
  }

  LineSearchResult zoom(double f0, double slope0, double lo, double f_lo, double s_lo, double hi,
                        double f_hi, double s_hi, std::vector<double>& x_out,
                        std::vector<double>& g_out) {
    constexpr double kC1 = 1e-4;
    constexpr double kC2 = 0.9;
    for (int it = 0; it < 60; ++it) {
      double step = cubic_min(lo, f_lo, s_lo, hi, f_hi, s_hi);
      const double a = std::min(lo, hi), b = std::max(lo, hi);
      const double margin = 0.1 * (b - a);
      if (!std::isfinite(step) || step < a + margin || step > b - margin) step = 0.5 * (a + b);
      const auto [value, slope] = eval(step);
      if (value > f0 + kC1 * step * slope0 || value >= f_lo) {
        hi = step;
        f_hi = value;
        s_hi = slope;
      } else {
        if (std::abs(slope) <= -kC2 * slope0) return accept(step, value, x_out, g_out);
        if (slope * (hi - lo) >= 0.0) {
          hi = lo;
          f_hi = f_lo;
          s_hi = s_lo;
        }
        lo = step;
        f_lo = value;
        s_lo = slope;
      }
      if (std::abs(hi - lo) < 1e-16 * std::max(1.0, std::abs(lo))) break;
    }
    // Accept the best sufficient-decrease point if the curvature test never passed.
    if (lo > 0.0 && f_lo < f0) {
      eval(lo);
      return accept(lo, f_lo, x_out, g_out);
    }
    return {};
  }

  static double cubic_min(double a, double fa, double sa, double b, double fb, double sb) {
    const double d1 = sa + sb - 3.0 * (fa - fb) / (a - b);
    const double disc = d1 * d1 - sa * sb;
    if (disc < 0.0) return std::nan("");
    const double d2 = std::copysign(std::sqrt(disc), b - a);
    return b - (b - a) * (sb + d2 - d1) / (sb - sa + 2.0 * d2);
  }

  LogisticObjective& f_;
  std::span<const double> x_;
  std::span<const double> dir_;
  std::vector<double> trial_;
  std::vector<double> grad_;
};

}  // namespace

void ExtractionConfig::validate() const {
  if (!(regularization_c > 0.0) || !std::isfinite(regularization_c))
    throw Error(ErrorCode::InvalidArgument, "regularization_c must be positive");
  if (max_iterations <= 0) throw Error(ErrorCode::InvalidArgument, "max_iterations must be positive");
  if (!(gradient_tolerance > 0.0))
    throw Error(ErrorCode::InvalidArgument, "gradient_tolerance must be positive");
}

RawClassifier fit_classifier(std::span<const ContrastivePair> pairs, const ExtractionConfig& config) {
  config.validate();
  if (pairs.empty()) throw Error(ErrorCode::EmptyInput, "fit_classifier needs at least one pair");
  validate_pairs(pairs);

  LogisticObjective objective(pairs, config.regularization_c);
  const std::size_t n = objective.n_params();
  constexpr std::size_t kMemory = 10;

  std::vector<double> x(n, 0.0), g(n), x_next(n), g_next(n), dir(n);
  double fx = objective.evaluate(x, g);
  std::deque<std::vector<double>> s_hist, y_hist;
  std::deque<double> rho_hist;

  RawClassifier out;
  out.regularization_c = config.regularization_c;
  int iter = 0;
  double gnorm = norm(g);
  while (gnorm > config.gradient_tolerance && iter < config.max_iterations) {
    // Two-loop recursion: dir = -H g.
    dir = g;
    std::vector<double> alpha(s_hist.size());
    for (std::size_t i = s_hist.size(); i-- > 0;) {
      alpha[i] = rho_hist[i] * dot(s_hist[i], dir);
      for (std::size_t k = 0; k < n; ++k) dir[k] -= alpha[i] * y_hist[i][k];
    }
    if (!s_hist.empty()) {
      const double gamma = dot(s_hist.back(), y_hist.back()) / dot(y_hist.back(), y_hist.back());
      for (auto& d : dir) d *= gamma;
    }
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      const double beta = rho_hist[i] * dot(y_hist[i], dir);
      for (std::size_t k = 0; k < n; ++k) dir[k] += (alpha[i] - beta) * s_hist[i][k];
    }
    for (auto& d : dir) d = -d;

    double slope = dot(g, dir);
    if (!(slope < 0.0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      for (std::size_t k = 0; k < n; ++k) dir[k] = -g[k];
      slope = -gnorm * gnorm;
    }
    const double step0 = s_hist.empty() ? std::min(1.0, 1.0 / gnorm) : 1.0;
    WolfeLineSearch search(objective, x, dir);
    const auto ls = search.run(fx, slope, step0, x_next, g_next);
    ++iter;
    if (!ls.ok) {
      if (s_hist.empty()) break;  // steepest descent failed too
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      continue;
    }
    std::vector<double> s(n), y(n);
    for (std::size_t k = 0; k < n; ++k) {
      s[k] = x_next[k] - x[k];
      y[k] = g_next[k] - g[k];
    }
    const double sy = dot(s, y);
    if (sy > 1e-12 * norm(s) * norm(y)) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (s_hist.size() > kMemory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    x.swap(x_next);
    g.swap(g_next);
    fx = ls.value;
    gnorm = norm(g);
  }

  out.weights.assign(x.begin(), x.end() - 1);
  out.bias = x.back();
  out.final_gradient_norm = gnorm;
  out.converged = gnorm <= config.gradient_tolerance;
  out.iterations = iter;
  return out;
}

ProjectionStats projection_stats(std::span<const double> plus, std::span<const double> minus) {
  if (plus.size() < 2 || minus.size() < 2)
    throw Error(ErrorCode::Degenerate, "projection_stats needs >= 2 samples per class");
  auto moments = [](std::span<const double> xs) {
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return std::pair{mean, ss / static_cast<double>(xs.size() - 1)};
  };
  const auto [mu_p, var_p] = moments(plus);
  const auto [mu_m, var_m] = moments(minus);
  ProjectionStats s;
  s.mu_plus = mu_p;
  s.sigma_plus = std::sqrt(var_p);
  s.mu_minus = mu_m;
  s.sigma_minus = std::sqrt(var_m);
  s.n_plus = plus.size();
  s.n_minus = minus.size();
  const double np = static_cast<double>(s.n_plus), nm = static_cast<double>(s.n_minus);
  const double pooled = std::sqrt(((np - 1.0) * var_p + (nm - 1.0) * var_m) / (np + nm - 2.0));
  if (pooled > 0.0) {
    s.cohen_d = (mu_p - mu_m) / pooled;
  } else if (mu_p == mu_m) {
    s.cohen_d = 0.0;
  } else {
    throw Error(ErrorCode::Degenerate, "zero pooled SD with distinct class means");
  }
  return s;
}

ProjectionStats projection_stats(std::span<const ContrastivePair> pairs,
                                 std::span<const double> direction) {
  const std::size_t d = validate_pairs(pairs);
  if (direction.size() != d) throw Error(ErrorCode::DimensionMismatch, "direction length");
  check_unit(direction, "direction");
  std::vector<double> plus, minus;
  plus.reserve(pairs.size());
  minus.reserve(pairs.size());
  for (const auto& p : pairs) {
    plus.push_back(dot(p.positive, direction));
    minus.push_back(dot(p.negative, direction));
  }
  return projection_stats(plus, minus);
}

SteeringVector build_steering_vector(const RawClassifier& classifier,
                                     std::span<const ContrastivePair> pairs, std::string trait,
                                     int layer) {
  const std::size_t d = validate_pairs(pairs);
  if (classifier.weights.size() != d) throw Error(ErrorCode::DimensionMismatch, "classifier weights");
  const double w_norm = norm(classifier.weights);
  if (!(w_norm > 0.0)) throw Error(ErrorCode::ZeroWeights, "classifier weight vector is zero");
  if (!classifier.converged)
    throw Error(ErrorCode::InvalidArgument, "classifier did not converge");

  std::vector<double> direction(d);
  for (std::size_t k = 0; k < d; ++k) direction[k] = classifier.weights[k] / w_norm;
  const auto stats = projection_stats(pairs, direction);
  const double delta_mu = stats.mu_plus - stats.mu_minus;
  if (std::abs(delta_mu) <= 1e-12)
    throw Error(ErrorCode::ZeroDeltaMu, "classes indistinguishable along the probe direction");
  const double bias_rescaled = classifier.bias * delta_mu / w_norm;
  const double boundary = -bias_rescaled / std::abs(delta_mu);
  return SteeringVector(layer, std::move(direction), delta_mu, bias_rescaled, boundary, stats,
                        std::move(trait), VectorSource::LogReg);
}

std::vector<double> caa_direction(std::span<const ContrastivePair> pairs) {
  const std::size_t d = validate_pairs(pairs);
  std::vector<double> diff(d, 0.0);
  for (const auto& p : pairs) {
    for (std::size_t k = 0; k < d; ++k) diff[k] += p.positive[k] - p.negative[k];
  }
  for (auto& x : diff) x /= static_cast<double>(pairs.size());
  const double len = norm(diff);
  if (!(len > 0.0)) throw Error(ErrorCode::ZeroVector, "class means coincide");
  for (auto& x : diff) x /= len;
  return diff;
}

SteeringVector build_caa_steering_vector(std::span<const ContrastivePair> pairs, std::string trait,
                                         int layer) {
  auto direction = caa_direction(pairs);
  const auto stats = projection_stats(pairs, direction);
  const double delta_mu = stats.mu_plus - stats.mu_minus;
  if (std::abs(delta_mu) <= 1e-12) throw Error(ErrorCode::ZeroDeltaMu, "delta_mu is zero");
  const double boundary = 0.5 * (stats.mu_plus + stats.mu_minus);
  const double bias_rescaled = -boundary * std::abs(delta_mu);
  return SteeringVector(layer, std::move(direction), delta_mu, bias_rescaled,
                        -bias_rescaled / std::abs(delta_mu), stats, std::move(trait),
                        VectorSource::Caa);
}

double direction_agreement(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::DimensionMismatch, "direction lengths differ");
  check_unit(a, "a");
  check_unit(b, "b");
  return std::clamp(dot(a, b), -1.0, 1.0);
}

SteeringVector extract_steering_vector(std::span<const ContrastivePair> pairs,
                                       const ExtractionConfig& config, std::string trait, int layer) {
  const auto clf = fit_classifier(pairs, config);
  if (!clf.converged) {
    std::ostringstream msg;
    msg << "L-BFGS stopped after " << clf.iterations << " iterations with |grad| = "
        << clf.final_gradient_norm;
    throw Error(ErrorCode::NotConverged, msg.str());
  }
  auto v = build_steering_vector(clf, pairs, trait, layer);
  Meta meta{{"solver", "lbfgs"},
            {"regularization_c", format_double(config.regularization_c)},
            {"iterations", std::to_string(clf.iterations)},
            {"final_gradient_norm", format_double(clf.final_gradient_norm)},
            {"raw_bias", format_double(clf.bias)},
            {"raw_weight_norm", format_double(norm(clf.weights))},
            {"n_pairs", std::to_string(pairs.size())}};
  return SteeringVector(v.layer(), std::vector<double>(v.direction().begin(), v.direction().end()),
                        v.delta_mu(), v.bias_rescaled(), v.boundary(), v.stats(), v.trait(),
                        v.source(), std::move(meta));
}

}  // namespace tokensteer
