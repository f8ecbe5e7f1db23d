#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "oracles.hpp"
#include "tokensteer/error.hpp"
#include "tokensteer/metrics.hpp"
#include "tokensteer/simulator.hpp"
#include "tokensteer/steering.hpp"

using namespace tokensteer;
using doctest::Approx;

namespace {

SteeringVector vec(std::vector<double> dir, double mu_plus, double sigma_plus, double delta_mu = 2.0) {
  ProjectionStats st{mu_plus, sigma_plus, mu_plus - delta_mu, 1.0, 10, 10, 1.0};
  return SteeringVector(0, std::move(dir), delta_mu, 0.0, 0.0, st, "t", VectorSource::LogReg);
}

TurnText embedded(int index, std::vector<std::vector<double>> embeddings) {
  TurnText t;
  t.turn_index = index;
  for (auto& e : embeddings) t.sentences.push_back({"s", std::move(e)});
  return t;
}

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("target distance") {
  const auto v = vec({1.0, 0.0}, 3.0, 1.0);
  const ActivationTrace t(0, 2, {9, 9, 3, 0, 5, 7, 1, -2}, {Role::Prompt, Role::Response, Role::Response, Role::Response});
  const auto d = target_distance(t, v);
  REQUIRE(d.size() == 3);
  CHECK(d[0] == 0.0);
  CHECK(d[1] == 2.0);
  CHECK(d[2] == 2.0);
  CHECK(target_distance(t, v, 2).size() == 2);
  CHECK(target_distance(t, v, std::nullopt).size() == 3);

  const auto zero = vec({1.0, 0.0}, 3.0, 0.0);
  CHECK(code_of([&] { target_distance(t, zero); }) == ErrorCode::ZeroSigma);
}

TEST_CASE("moving average") {
  const std::vector<double> c(6, 2.5);
  CHECK(moving_average(c, 3) == c);
  CHECK(moving_average(std::vector<double>{0, 8}, 2) == std::vector<double>{0, 4});
  const std::vector<double> s{1, -4, 9, 2};
  CHECK(moving_average(s, 1) == s);
  CHECK(moving_average(std::vector<double>{1, 2, 3, 4}, 3) == std::vector<double>{1, 1.5, 2, 3});
}

TEST_CASE("l2 divergence") {
  const ActivationTrace a(0, 2, {1, 1, 0, 0}, {Role::Response, Role::Response});
  CHECK(l2_divergence(a, a) == std::vector<double>{0, 0});
  const ActivationTrace one(0, 2, {0, 0}, {Role::Response});
  const ActivationTrace moved(0, 2, {3, 4}, {Role::Response});
  CHECK(l2_divergence(one, moved) == std::vector<double>{5.0});

  const auto v = vec(oracle::unit({1, 2}), 1.0, 1.0, 1.5);
  const auto [steered, rep] = steer_stream(a, SteeringConfig{Method::SwFC, -2.0, Position::All, v});
  for (double x : l2_divergence(a, steered)) CHECK(x == Approx(3.0).epsilon(1e-12));

  const ActivationTrace other(0, 2, {1, 1}, {Role::Response});
  CHECK(code_of([&] { l2_divergence(a, other); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("cross entropy") {
  CHECK(cross_entropy(std::vector<double>{-1, -2, -3}) == 2.0);
  CHECK(cross_entropy(std::vector<double>{0, 0, 0}) == 0.0);
  CHECK(cross_entropy(std::vector<double>{-1, -3, -100}, 2) == 2.0);
  CHECK(code_of([] { cross_entropy(std::vector<double>{}); }) == ErrorCode::EmptySequence);
  CHECK(code_of([] { cross_entropy(std::vector<double>{-1, 0.5}); }) == ErrorCode::PositiveLogprob);
}

TEST_CASE("token count") {
  CHECK(token_count(ActivationTrace(0, 1, {1, 2}, {Role::Prompt, Role::Prompt})) == 0);
  const ActivationTrace t(0, 1, {1, 2, 3, 4, 5},
                          {Role::Prompt, Role::Prompt, Role::Response, Role::Response, Role::Response});
  CHECK(token_count(t) == 3);

  ToyProcessSpec spec;
  spec.d_model = 4;
  spec.n_turns = 1;
  spec.tokens_per_turn = 7;
  const auto turns = run_toy_process(spec, Condition::Aligned, std::nullopt);
  CHECK(token_count(turns[0]) == 7);
  CHECK(token_count(toy_turn_texts(turns, 3)[0]) == 7);
}

TEST_CASE("sentence reuse") {
  const auto cur = embedded(1, {{1, 0}});
  const std::vector<TurnText> same{embedded(0, {{1, 0}})};
  const std::vector<TurnText> ortho{embedded(0, {{0, 1}})};
  CHECK(sentence_reuse_rate(cur, same) == 1.0);
  CHECK(sentence_reuse_rate(cur, ortho) == 0.0);
  CHECK(sentence_reuse_rate(embedded(1, {{1, 0}, {0, 1}}), same) == 0.5);
  CHECK(sentence_reuse_rate(cur, std::vector<TurnText>{}) == 0.0);
  // cosine 0.8 is not strictly above the threshold
  CHECK(sentence_reuse_rate(cur, std::vector<TurnText>{embedded(0, {{0.8, 0.6}})}) == 0.0);
  CHECK(code_of([&] { sentence_reuse_rate(make_turn(1, "no vectors."), same); }) ==
        ErrorCode::MissingEmbedding);
}

TEST_CASE("n-gram repetition") {
  const auto t1 = make_turn(0, "a b c d e");
  const auto t2 = make_turn(1, "a b c d x");
  const std::vector<TurnText> hist{t1};
  CHECK(cross_turn_repetition(t2, hist) == 0.5);
  CHECK(ngram_repetition(t2, &hist) == 0.5);
  CHECK(within_turn_repetition(make_turn(0, "one two three four five six")) == 0.0);
  CHECK(within_turn_repetition(make_turn(0, "a b a b a b a b")) == Approx(0.6).epsilon(1e-15));
  CHECK(ngram_repetition(make_turn(0, "a b a b a b a b"), nullptr) == Approx(0.6));
  CHECK(within_turn_repetition(make_turn(0, "a b c")) == 0.0);
  CHECK(cross_turn_repetition(make_turn(1, "a b"), hist) == 0.0);
}

TEST_CASE("tokenizer and sentence splitter") {
  CHECK(tokenize("Hello, World!  it's") == std::vector<std::string>{"hello", "world", "it's"});
  CHECK(split_sentences("One. Two!Three? Four") == std::vector<std::string>{"One.", "Two!Three?", "Four"});
  const auto t = make_turn(2, "A b. C d.");
  CHECK(t.turn_index == 2);
  CHECK(t.sentences.size() == 2);
  CHECK(t.tokens.size() == 4);
}

TEST_CASE("sentence F1 and response cosine") {
  const auto ref = embedded(0, {{1, 0}, {0, 1}});
  CHECK(sentence_f1_similarity(ref, ref) == Approx(1.0));
  CHECK(sentence_f1_similarity(embedded(0, {{1, 0}}), ref) == Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(sentence_f1_similarity(embedded(0, {{1, 0}}), embedded(0, {{0, 1}})) == 0.0);

  CHECK(response_cosine(std::vector<double>{1, 2}, std::vector<double>{1, 2}) == Approx(1.0));
  CHECK(response_cosine(std::vector<double>{1, 2}, std::vector<double>{-1, -2}) == Approx(-1.0));
  CHECK(response_cosine(std::vector<double>{1, 0}, std::vector<double>{0.6, 0.8}) == Approx(0.6));
}

TEST_CASE("PCA") {
  const std::vector<std::vector<double>> line{{0, 0, 0}, {1, 2, 3}, {2, 4, 6}, {-1, -2, -3}};
  const auto p = pca_2d(line);
  CHECK(p.explained[0] == Approx(1.0));
  CHECK(p.explained[1] == Approx(0.0));
  CHECK(p.degenerate_rank);

  const std::vector<std::vector<double>> square{{1, 1}, {1, -1}, {-1, 1}, {-1, -1}};
  const auto q = pca_2d(square);
  CHECK(q.explained[0] == Approx(0.5));
  CHECK(q.explained[1] == Approx(0.5));
  CHECK_FALSE(q.degenerate_rank);

  std::mt19937_64 g(12);
  const std::size_t d = 64, n = 30;
  const auto a = oracle::unit(oracle::gaussian(g, d));
  auto b = oracle::gaussian(g, d);
  const double ab = oracle::dot(a, b);
  for (std::size_t k = 0; k < d; ++k) b[k] -= ab * a[k];
  b = oracle::unit(b);
  const auto offset = oracle::gaussian(g, d);
  std::vector<std::array<double, 2>> planted(n);
  std::vector<std::vector<double>> cloud(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i) {
    planted[i] = {3.0 * oracle::gaussian(g, 1)[0], oracle::gaussian(g, 1)[0]};
    for (std::size_t k = 0; k < d; ++k) cloud[i][k] = offset[k] + planted[i][0] * a[k] + planted[i][1] * b[k];
  }
  const auto r = pca_2d(cloud);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double want = std::hypot(planted[i][0] - planted[j][0], planted[i][1] - planted[j][1]);
      const double got = std::hypot(r.points[i][0] - r.points[j][0], r.points[i][1] - r.points[j][1]);
      CHECK(std::abs(want - got) <= 1e-6);
    }
  CHECK(r.explained[0] + r.explained[1] == Approx(1.0));

  CHECK_THROWS_AS(pca_2d(std::vector<std::vector<double>>{{1, 2}, {3, 4}}), Error);
}

TEST_CASE("projection histogram") {
  const auto one = projection_histogram(std::vector<double>{0.7}, 4);
  REQUIRE(one.size() == 1);
  CHECK(one[0].count == 1);
  const auto h = projection_histogram(std::vector<double>{0, 1, 2, 3}, 2);
  REQUIRE(h.size() == 2);
  CHECK(h[0].count == 2);
  CHECK(h[1].count == 2);
  std::mt19937_64 g(3);
  const auto xs = oracle::gaussian(g, 257);
  std::size_t total = 0;
  for (const auto& bin : projection_histogram(xs, 9)) total += bin.count;
  CHECK(total == 257);
}

TEST_CASE("metric report") {
  const auto r = make_report("x", {1, 2, 3, 4});
  CHECK(r.mean == 2.5);
  CHECK(r.ci95 > 0.0);
  CHECK(make_report("c", {2, 2, 2}).ci95 == 0.0);
  CHECK(make_report("x", {1, 2, 3, 4}).ci95 == r.ci95);
}
