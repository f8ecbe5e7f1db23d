#pragma once

// Independent reference implementations used only by tests. Nothing here
// calls into the library's numeric code.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "tokensteer/types.hpp"

namespace oracle {

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) acc += a[k] * b[k];
  return acc;
}

inline double norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

inline std::vector<double> unit(std::vector<double> v) {
  const double n = norm(v);
  for (auto& x : v) x /= n;
  return v;
}

struct SteerParams {
  tokensteer::Method method;
  double alpha;
  tokensteer::Position position;
  std::vector<double> dir;
  double delta_mu;
  double boundary;
  double mu_plus;
  double sigma_plus;
};

// Token-by-token loops written straight from the three update rules.
inline std::vector<double> naive_steer(std::vector<double> h, const std::vector<tokensteer::Role>& roles,
                                       const SteerParams& p, std::size_t* n_steered = nullptr) {
  const std::size_t d = p.dir.size();
  std::size_t steered = 0;
  for (std::size_t t = 0; t < roles.size(); ++t) {
    if (p.position == tokensteer::Position::Response && roles[t] != tokensteer::Role::Response) continue;
    double rho = 0.0;
    for (std::size_t k = 0; k < d; ++k) rho += h[t * d + k] * p.dir[k];
    double c = 0.0;
    bool apply = false;
    if (p.method == tokensteer::Method::SwFC) {
      c = p.alpha * p.delta_mu;
      apply = true;
    } else if (p.method == tokensteer::Method::StTP) {
      if (rho < p.boundary) {
        const double s = p.mu_plus + p.alpha * p.sigma_plus;
        c = s - rho;
        apply = true;
      }
    } else if (p.method == tokensteer::Method::StMP) {
      if (rho < p.boundary) {
        c = 2.0 * p.alpha * (p.boundary - rho);
        apply = true;
      }
    }
    if (!apply) continue;
    ++steered;
    for (std::size_t k = 0; k < d; ++k) h[t * d + k] = h[t * d + k] + c * p.dir[k];
  }
  if (n_steered) *n_steered = steered;
  return h;
}

struct Logistic {
  std::vector<double> w;
  double b = 0.0;
  double grad_norm = 0.0;
};

// Plain gradient descent with Armijo backtracking on
// 1/2 |w|^2 + C sum log(1 + exp(-y (w.x + b))).
inline Logistic gradient_descent(const std::vector<std::vector<double>>& x, const std::vector<int>& y, double c,
                                 double tol = 1e-9, int max_iter = 200000) {
  const std::size_t d = x.front().size();
  Logistic m{std::vector<double>(d, 0.0), 0.0, 0.0};
  auto loss = [&](const std::vector<double>& w, double b) {
    double f = 0.5 * dot(w, w);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double z = -y[i] * (dot(w, x[i]) + b);
      f += c * (z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)));
    }
    return f;
  };
  double f = loss(m.w, m.b);
  double step = 1.0;
  for (int it = 0; it < max_iter; ++it) {
    std::vector<double> gw = m.w;
    double gb = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double margin = y[i] * (dot(m.w, x[i]) + m.b);
      const double s = 1.0 / (1.0 + std::exp(margin));
      for (std::size_t k = 0; k < d; ++k) gw[k] -= c * y[i] * s * x[i][k];
      gb -= c * y[i] * s;
    }
    const double gn = std::sqrt(dot(gw, gw) + gb * gb);
    m.grad_norm = gn;
    if (gn < tol) break;
    step = std::min(step * 2.0, 1.0);
    while (true) {
      std::vector<double> w2 = m.w;
      for (std::size_t k = 0; k < d; ++k) w2[k] -= step * gw[k];
      const double b2 = m.b - step * gb;
      const double f2 = loss(w2, b2);
      if (f2 <= f - 1e-4 * step * gn * gn || step < 1e-16) {
        m.w = w2;
        m.b = b2;
        f = f2;
        break;
      }
      step *= 0.5;
    }
  }
  return m;
}

inline std::vector<double> gaussian(std::mt19937_64& g, std::size_t n, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  std::vector<double> v(n);
  for (auto& x : v) x = nd(g);
  return v;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("tokensteer_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace oracle
