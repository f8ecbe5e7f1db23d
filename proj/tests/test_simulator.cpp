#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "oracles.hpp"
#include "tokensteer/error.hpp"
#include "tokensteer/extraction.hpp"
#include "tokensteer/io.hpp"
#include "tokensteer/random.hpp"
#include "tokensteer/simulator.hpp"

using namespace tokensteer;
using doctest::Approx;

namespace {

std::vector<double> projections(const ActivationTrace& t, const std::vector<double>& u) {
  std::vector<double> out;
  for (std::size_t i = 0; i < t.n_tokens(); ++i) {
    const auto r = t.row(i);
    out.push_back(oracle::dot({r.begin(), r.end()}, u));
  }
  return out;
}

SteeringVector toy_vector(const ToyProcessSpec& spec, double boundary) {
  ProjectionStats st{2.0, 0.5, 0.0, 0.5, 50, 50, 4.0};
  return SteeringVector(spec.layer, spec.unit_direction(), 2.0, -boundary * 2.0, boundary, st, "t",
                        VectorSource::LogReg);
}

ToyProcessSpec small_toy() {
  ToyProcessSpec s;
  s.d_model = 8;
  s.n_turns = 2;
  s.tokens_per_turn = 7;
  s.prompt_tokens_per_turn = 3;
  s.drift = -0.2;
  s.seed = 5;
  return s;
}

}  // namespace

TEST_CASE("rng is reproducible and stream-separated") {
  Rng a(42), b(42), c(42, 1);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const double x = a.uniform();
    CHECK(x == b.uniform());
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
    differs |= x != c.uniform();
  }
  CHECK(differs);
  Rng d(1);
  for (int i = 0; i < 1000; ++i) CHECK(d.below(7) < 7);
}

TEST_CASE("generate_pairs is deterministic and byte-stable on disk") {
  SyntheticSpec s;
  s.d_model = 6;
  s.n_per_class = 20;
  const auto a = generate_pairs(s);
  const auto b = generate_pairs(s);
  REQUIRE(a.size() == 20);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].positive == b[i].positive);
    CHECK(a[i].negative == b[i].negative);
  }
  const auto dir = oracle::temp_dir("sim_pairs");
  io::write_pairs(a, dir / "a.jsonl");
  io::write_pairs(b, dir / "b.jsonl");
  CHECK(io::read_text(dir / "a.jsonl") == io::read_text(dir / "b.jsonl"));
  s.seed = 43;
  CHECK(generate_pairs(s)[0].positive != a[0].positive);
}

TEST_CASE("zero noise puts every pair on the planted line") {
  SyntheticSpec s;
  s.d_model = 5;
  s.n_per_class = 30;
  s.noise_sigma = 0.0;
  s.planted_direction = oracle::unit({1, -2, 0, 2, 4});
  const auto u = s.direction();
  for (const auto& p : generate_pairs(s)) {
    for (const auto* x : {&p.positive, &p.negative}) {
      const double a = oracle::dot(*x, u);
      for (std::size_t k = 0; k < u.size(); ++k) CHECK(std::abs((*x)[k] - a * u[k]) <= 1e-12);
    }
  }
}

TEST_CASE("planted classes have the requested separation") {
  SyntheticSpec s;
  s.d_model = 16;
  s.n_per_class = 500;
  const auto pairs = generate_pairs(s);
  const auto st = projection_stats(pairs, s.direction());
  CHECK(st.cohen_d == Approx(4.0).epsilon(0.1));
  CHECK(st.mu_plus == Approx(2.0).epsilon(0.1));
}

TEST_CASE("generator settings are validated") {
  SyntheticSpec s;
  s.n_per_class = 1;
  CHECK_THROWS_AS(s.validate(), Error);
  ToyProcessSpec t;
  t.emission_thresholds = {0.0, 0.0};
  CHECK_THROWS_AS(t.validate(), Error);
  t = ToyProcessSpec{};
  t.direction = {1.0, 1.0};
  CHECK_THROWS_AS(t.validate(), Error);
}

TEST_CASE("toy process is deterministic and shaped per turn") {
  const auto spec = small_toy();
  const auto a = run_toy_process(spec, Condition::Malicious, std::nullopt);
  const auto b = run_toy_process(spec, Condition::Malicious, std::nullopt);
  REQUIRE(a.size() == 2);
  CHECK(a == b);
  for (const auto& t : a) {
    CHECK(t.n_tokens() == 10);
    CHECK(t.n_response_tokens() == 7);
    CHECK(t.meta().at("rng") == kRngName);
    CHECK(t.response_logprobs().size() == 7);
  }
  const auto texts = toy_turn_texts(a, spec.sentence_tokens);
  CHECK(texts[0].tokens.size() == 7);
  CHECK(token_count(texts[0]) == 7);
}

TEST_CASE("malicious drift lowers the projection at every step") {
  const auto spec = small_toy();
  const auto u = spec.unit_direction();
  std::vector<double> all;
  for (const auto& t : run_toy_process(spec, Condition::Malicious, std::nullopt)) {
    const auto p = projections(t, u);
    all.insert(all.end(), p.begin(), p.end());
  }
  for (std::size_t i = 1; i < all.size(); ++i) CHECK(all[i] < all[i - 1]);
  CHECK(all.front() == Approx(spec.initial_projection));
}

TEST_CASE("StTP keeps every emitted projection at or above the boundary") {
  auto spec = small_toy();
  spec.tokens_per_turn = 30;
  const auto u = spec.unit_direction();
  const auto v = toy_vector(spec, 1.0);
  const SteeringConfig cfg{Method::StTP, 0.0, Position::All, v};
  std::size_t below_unsteered = 0;
  for (const auto& t : run_toy_process(spec, Condition::Malicious, std::nullopt))
    for (double p : projections(t, u)) below_unsteered += p < 1.0;
  CHECK(below_unsteered > 0);
  for (const auto& t : run_toy_process(spec, Condition::Malicious, cfg))
    for (double p : projections(t, u)) CHECK(p >= 1.0 - 1e-9);
}

TEST_CASE("aligned run stays above a boundary under the trajectory") {
  const auto spec = small_toy();
  const auto u = spec.unit_direction();
  const auto v = toy_vector(spec, 0.5);
  for (Method m : {Method::StTP, Method::StMP}) {
    const SteeringConfig cfg{m, 1.0, Position::All, v};
    const auto plain = run_toy_process(spec, Condition::Aligned, std::nullopt);
    const auto steered = run_toy_process(spec, Condition::Aligned, cfg);
    for (std::size_t i = 0; i < plain.size(); ++i) {
      for (double p : projections(plain[i], u)) CHECK(p >= 0.5);
      CHECK(steered[i].hidden().size() == plain[i].hidden().size());
      for (std::size_t k = 0; k < plain[i].hidden().size(); ++k)
        CHECK(steered[i].hidden()[k] == plain[i].hidden()[k]);
    }
  }
}

TEST_CASE("SwFC overshoots the aligned trajectory by exactly alpha * delta_mu") {
  const auto spec = small_toy();
  const auto u = spec.unit_direction();
  const auto v = toy_vector(spec, 0.5);
  const SteeringConfig cfg{Method::SwFC, 3.0, Position::All, v};
  const auto plain = run_toy_process(spec, Condition::Aligned, std::nullopt);
  const auto steered = run_toy_process(spec, Condition::Aligned, cfg);
  for (std::size_t i = 0; i < plain.size(); ++i) {
    const auto a = projections(plain[i], u), b = projections(steered[i], u);
    for (std::size_t t = 0; t < a.size(); ++t) CHECK(std::abs(b[t] - a[t] - 6.0) <= 1e-9);
  }
}

TEST_CASE("steering vector must match the toy process") {
  const auto spec = small_toy();
  auto other = spec;
  other.d_model = 4;
  const SteeringConfig cfg{Method::SwFC, 1.0, Position::All, toy_vector(other, 0.0)};
  try {
    run_toy_process(spec, Condition::Malicious, cfg);
    FAIL("expected DimensionMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DimensionMismatch);
  }
}

TEST_CASE("emission buckets") {
  const std::vector<double> th{-1, 0, 1};
  CHECK(emission_bucket(th, -5) == 0);
  CHECK(emission_bucket(th, -0.5) == 1);
  CHECK(emission_bucket(th, 0.5) == 2);
  CHECK(emission_bucket(th, 9) == 3);
}

TEST_CASE("generator settings json round trip") {
  auto t = small_toy();
  t.aligned_drift = 0.05;
  const auto back = toy_spec_from_json(to_json(t));
  CHECK(back.drift == t.drift);
  CHECK(back.tokens_per_turn == 7);
  CHECK(back.aligned_drift == 0.05);
  SyntheticSpec s;
  s.separation_d = 3.0;
  CHECK(synthetic_spec_from_json(to_json(s)).separation_d == 3.0);
}
