#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <bit>
#include <random>

#include "oracles.hpp"
#include "tokensteer/error.hpp"
#include "tokensteer/steering.hpp"

using namespace tokensteer;
using doctest::Approx;

namespace {

SteeringVector make_vector(std::vector<double> dir, double delta_mu, double boundary, double mu_plus,
                           double sigma_plus, int layer = 0) {
  ProjectionStats st;
  st.mu_plus = mu_plus;
  st.sigma_plus = sigma_plus;
  st.mu_minus = mu_plus - delta_mu;
  st.sigma_minus = 1.0;
  st.n_plus = st.n_minus = 10;
  st.cohen_d = delta_mu;
  return SteeringVector(layer, std::move(dir), delta_mu, -boundary * std::abs(delta_mu), boundary, st, "t",
                        VectorSource::LogReg);
}

bool same_bits(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  return true;
}

SteeringConfig config(Method m, double alpha, Position p, const SteeringVector& v) {
  return SteeringConfig{m, alpha, p, v};
}

}  // namespace

TEST_CASE("SwFC hand examples") {
  const auto v = make_vector({1.0, 0.0}, 2.0, 0.0, 1.0, 1.0);
  CHECK(steer_swfc(std::vector<double>{1, 0}, v, 3.0) == std::vector<double>{7, 0});
  CHECK(steer_swfc(std::vector<double>{1.5, -2}, v, 0.0) == std::vector<double>{1.5, -2});
  CHECK(steer_swfc(std::vector<double>{0, 5}, v, 1.0) == std::vector<double>{2, 5});
}

TEST_CASE("StTP hand examples and strict gate") {
  const auto v = make_vector({0.0, 1.0}, 2.0, 0.5, 2.0, 0.5);
  CHECK(sttp_target(v, 2.0) == 3.0);
  auto h = steer_sttp(std::vector<double>{4.0, 0.0}, v, 2.0);
  CHECK(h[0] == 4.0);
  CHECK(h[1] == Approx(3.0).epsilon(1e-12));
  CHECK(steer_sttp(std::vector<double>{4.0, 0.6}, v, 2.0) == std::vector<double>{4.0, 0.6});
  CHECK(steer_sttp(std::vector<double>{4.0, 0.5}, v, 2.0) == std::vector<double>{4.0, 0.5});
}

TEST_CASE("StMP hand examples") {
  const auto v = make_vector({1.0, 0.0}, 2.0, 1.0, 2.0, 0.5);
  CHECK(steer_stmp(std::vector<double>{0.0, 3.0}, v, 1.0)[0] == Approx(2.0));
  CHECK(steer_stmp(std::vector<double>{0.0, 3.0}, v, 0.5)[0] == Approx(1.0));
  CHECK(steer_stmp(std::vector<double>{1.2, 3.0}, v, 1.0) == std::vector<double>{1.2, 3.0});
  CHECK(steer_stmp(std::vector<double>{1.0, 3.0}, v, 1.0) == std::vector<double>{1.0, 3.0});
}

TEST_CASE("steer_stream matches the naive loops exactly") {
  std::mt19937_64 g(21);
  std::uniform_int_distribution<std::size_t> dim_d(1, 8), tok_d(1, 16);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  const Method methods[] = {Method::SwFC, Method::StTP, Method::StMP};
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = dim_d(g), n = tok_d(g);
    const auto dir = oracle::unit(oracle::gaussian(g, d));
    const double dmu = u(g) + 3.5, m = u(g), mup = u(g), sp = std::abs(u(g));
    const auto v = make_vector(dir, dmu, m, mup, sp, 3);
    std::vector<Role> roles(n);
    for (auto& r : roles) r = (g() & 1) ? Role::Response : Role::Prompt;
    const auto hidden = oracle::gaussian(g, n * d, 2.0);
    const ActivationTrace trace(3, d, hidden, roles);
    const Method method = methods[trial % 3];
    const Position pos = (trial / 3) % 2 ? Position::All : Position::Response;
    const double alpha = method == Method::StMP ? std::abs(u(g)) : u(g);
    const auto [out, report] = steer_stream(trace, config(method, alpha, pos, v));
    std::size_t expected_steered = 0;
    const auto ref = oracle::naive_steer(hidden, roles,
                                         {method, alpha, pos, dir, v.delta_mu(), v.boundary(),
                                          v.stats().mu_plus, v.stats().sigma_plus},
                                         &expected_steered);
    CHECK(same_bits(out.hidden(), ref));
    CHECK(report.n_tokens_steered == expected_steered);
    CHECK(report.n_tokens_seen == n);
  }
}

TEST_CASE("RESPONSE mode leaves prompt rows bit-identical") {
  const auto v = make_vector({1.0, 0.0, 0.0}, 1.0, 5.0, 1.0, 1.0);
  const std::vector<double> hidden{0.1, 0.2, 0.3, -1, 2, 3, 0.7, 0.8, 0.9, -4, 5, 6};
  const ActivationTrace trace(0, 3, hidden, {Role::Prompt, Role::Prompt, Role::Response, Role::Response});
  for (Method m : {Method::SwFC, Method::StTP, Method::StMP}) {
    const auto [out, report] = steer_stream(trace, config(m, 1.0, Position::Response, v));
    CHECK(report.n_tokens_steered <= 2);
    CHECK(report.n_tokens_steered == 2);
    CHECK(same_bits(out.hidden().subspan(0, 6), std::span<const double>(hidden).subspan(0, 6)));
    CHECK_FALSE(report.per_token[0].steered);
    CHECK_FALSE(report.per_token[1].steered);
  }
}

TEST_CASE("StTP on an already-aligned trace is a no-op") {
  const auto v = make_vector({0.0, 1.0}, 2.0, 0.0, 2.0, 0.5);
  const ActivationTrace trace(0, 2, {1, 0.5, 2, 1.0, 3, 0.0}, {Role::Response, Role::Response, Role::Response});
  const auto [out, report] = steer_stream(trace, config(Method::StTP, 6.0, Position::All, v));
  CHECK(out == trace);
  CHECK(report.n_tokens_steered == 0);
}

TEST_CASE("SwFC report delta_l2 equals alpha * delta_mu") {
  const auto v = make_vector(oracle::unit({1.0, 2.0, 2.0}), 2.5, 0.0, 2.0, 1.0);
  const ActivationTrace trace(0, 3, {1, 2, 3, -4, 5, 6, 0, 0, 0}, {Role::Prompt, Role::Response, Role::Response});
  const auto [out, report] = steer_stream(trace, config(Method::SwFC, 1.0, Position::All, v));
  REQUIRE(report.per_token.size() == 3);
  for (const auto& t : report.per_token) {
    CHECK(t.steered);
    CHECK(t.delta_l2 == Approx(2.5).epsilon(1e-12));
    CHECK(t.rho_after - t.rho_before == Approx(2.5).epsilon(1e-12));
  }
}

TEST_CASE("properties on random traces") {
  std::mt19937_64 g(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 6, n = 12;
    const auto dir = oracle::unit(oracle::gaussian(g, d));
    const double m = 0.3 * (trial % 5) - 0.5;
    const auto v = make_vector(dir, 2.0, m, 1.0, 0.7);
    const auto hidden = oracle::gaussian(g, n * d, 1.5);
    const ActivationTrace trace(0, d, hidden, std::vector<Role>(n, Role::Response));

    for (Method method : {Method::SwFC, Method::StTP, Method::StMP}) {
      const double alpha = method == Method::StMP ? 0.75 : 2.0;
      const auto [out, report] = steer_stream(trace, config(method, alpha, Position::All, v));
      for (std::size_t t = 0; t < n; ++t) {
        std::vector<double> diff(d);
        for (std::size_t k = 0; k < d; ++k) diff[k] = out.hidden()[t * d + k] - hidden[t * d + k];
        const double along = oracle::dot(diff, dir);
        for (std::size_t k = 0; k < d; ++k) diff[k] -= along * dir[k];
        CHECK(oracle::norm(diff) <= 1e-9 * std::max(1.0, std::abs(along)));
        const auto& rep = report.per_token[t];
        if (method == Method::StTP && rep.steered) CHECK(std::abs(rep.rho_after - sttp_target(v, alpha)) <= 1e-9);
        if (method == Method::StMP && rep.steered) {
          CHECK(std::abs(rep.rho_after - ((1 - 2 * alpha) * rep.rho_before + 2 * alpha * m)) <= 1e-9);
          CHECK(rep.rho_after >= m - 1e-9);
        }
        if (method == Method::SwFC) CHECK(std::abs(rep.rho_after - rep.rho_before - alpha * 2.0) <= 1e-9);
      }
      if (method != Method::SwFC) {
        // StTP target is above m here, StMP has alpha >= 0.5: a second pass changes nothing.
        const auto [again, r2] = steer_stream(out, config(method, alpha, Position::All, v));
        for (std::size_t i = 0; i < n * d; ++i) CHECK(std::abs(again.hidden()[i] - out.hidden()[i]) <= 1e-9);
      }
    }

    // Gating monotonicity in the boundary.
    const auto lower = make_vector(dir, 2.0, m - 0.4, 1.0, 0.7);
    const auto [o1, hi] = steer_stream(trace, config(Method::StMP, 1.0, Position::All, v));
    const auto [o2, lo] = steer_stream(trace, config(Method::StMP, 1.0, Position::All, lower));
    for (std::size_t t = 0; t < n; ++t)
      if (lo.per_token[t].steered) CHECK(hi.per_token[t].steered);
  }
}

TEST_CASE("online feed matches offline steering") {
  std::mt19937_64 g(4);
  const std::size_t d = 5, n = 20;
  const auto dir = oracle::unit(oracle::gaussian(g, d));
  const auto v = make_vector(dir, 1.5, 0.2, 1.0, 0.5, 2);
  const auto hidden = oracle::gaussian(g, n * d);
  std::vector<Role> roles(n, Role::Response);
  roles[0] = roles[1] = Role::Prompt;
  const ActivationTrace trace(2, d, hidden, roles);
  for (Method m : {Method::SwFC, Method::StTP, Method::StMP}) {
    const auto cfg = config(m, 1.0, Position::Response, v);
    const auto [out, report] = steer_stream(trace, cfg);
    OnlineSteerer online(cfg);
    for (std::size_t t = 0; t < n; ++t) {
      const auto h = online.feed(trace.row(t), roles[t]);
      CHECK(same_bits(h, out.row(t)));
    }
    CHECK(online.report().n_tokens_steered == report.n_tokens_steered);
    CHECK(online.report().per_token == report.per_token);
  }
}

TEST_CASE("shape and layer checks") {
  const auto v = make_vector({1.0, 0.0}, 1.0, 0.0, 1.0, 1.0, 4);
  const ActivationTrace wrong_layer(3, 2, {1, 2}, {Role::Response});
  CHECK_THROWS_AS(steer_stream(wrong_layer, config(Method::SwFC, 1, Position::All, v)), Error);
  try {
    steer_stream(wrong_layer, config(Method::SwFC, 1, Position::All, v));
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::LayerMismatch);
  }
  const ActivationTrace wrong_dim(4, 3, {1, 2, 3}, {Role::Response});
  try {
    steer_stream(wrong_dim, config(Method::SwFC, 1, Position::All, v));
    FAIL("expected DimensionMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DimensionMismatch);
  }
  OnlineSteerer online(config(Method::SwFC, 1, Position::All, v));
  CHECK_THROWS_AS(online.feed(std::vector<double>{1, 2, 3}, Role::Response), Error);
  CHECK_THROWS_AS(Steerer(config(Method::AlignedBaseline, 1, Position::All, v)), Error);
}
