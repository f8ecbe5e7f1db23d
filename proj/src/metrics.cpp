#include "tokensteer/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>

#include "tokensteer/error.hpp"
#include "tokensteer/kernels.hpp"
#include "tokensteer/random.hpp"

namespace tokensteer {
namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) acc += a[k] * b[k];
  return acc;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::DimensionMismatch, "embedding dimensions differ");
  const double na = std::sqrt(dot(a, a));
  const double nb = std::sqrt(dot(b, b));
  if (!(na > 0.0) || !(nb > 0.0)) throw Error(ErrorCode::ZeroVector, "zero embedding");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

std::size_t window_length(std::size_t available, std::optional<std::size_t> window) {
  return window ? std::min(available, *window) : available;
}

std::vector<std::size_t> response_rows(const ActivationTrace& trace, std::optional<std::size_t> window) {
  std::vector<std::size_t> rows;
  const std::size_t limit = window_length(trace.n_response_tokens(), window);
  for (std::size_t t = 0; t < trace.n_tokens() && rows.size() < limit; ++t) {
    if (trace.roles()[t] == Role::Response) rows.push_back(t);
  }
  return rows;
}

std::span<const double> embedding_of(const Sentence& s) {
  if (!s.embedding) throw Error(ErrorCode::MissingEmbedding, "sentence '" + s.text + "' has no embedding");
  return *s.embedding;
}

double best_match(const Sentence& s, std::span<const Sentence> pool) {
  double best = -1.0;
  for (const auto& other : pool) best = std::max(best, cosine(embedding_of(s), embedding_of(other)));
  return best;
}

using Ngram = std::vector<std::string>;

std::vector<Ngram> ngrams(std::span<const std::string> tokens, std::size_t n) {
  std::vector<Ngram> out;
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "n-gram order must be >= 1");
  if (tokens.size() < n) return out;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) out.emplace_back(tokens.begin() + i, tokens.begin() + i + n);
  return out;
}

bool is_punct(unsigned char c) { return std::ispunct(c) != 0; }

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    std::size_t lo = i, hi = j;
    while (lo < hi && is_punct(static_cast<unsigned char>(text[lo]))) ++lo;
    while (hi > lo && is_punct(static_cast<unsigned char>(text[hi - 1]))) --hi;
    if (hi > lo) {
      std::string tok(text.substr(lo, hi - lo));
      for (char& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      out.push_back(std::move(tok));
    }
    i = j;
  }
  return out;
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  auto flush = [&](std::size_t lo, std::size_t hi) {
    while (lo < hi && std::isspace(static_cast<unsigned char>(text[lo]))) ++lo;
    while (hi > lo && std::isspace(static_cast<unsigned char>(text[hi - 1]))) --hi;
    if (hi > lo) out.emplace_back(text.substr(lo, hi - lo));
  };
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c != '.' && c != '!' && c != '?') continue;
    if (i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1]))) {
      flush(start, i + 1);
      start = i + 1;
    }
  }
  flush(start, text.size());
  return out;
}

TurnText make_turn(int turn_index, std::string_view text) {
  TurnText t;
  t.turn_index = turn_index;
  for (auto& s : split_sentences(text)) t.sentences.push_back(Sentence{std::move(s), std::nullopt});
  t.tokens = tokenize(text);
  return t;
}

void validate_conversation(std::span<const TurnText> turns) {
  std::optional<std::size_t> dim;
  for (const auto& t : turns) {
    if (t.turn_index < 0) throw Error(ErrorCode::InvariantViolation, "negative turn_index");
    for (const auto& s : t.sentences) {
      if (!s.embedding) continue;
      if (dim && *dim != s.embedding->size())
        throw Error(ErrorCode::DimensionMismatch, "sentence embeddings differ in dimension");
      dim = s.embedding->size();
    }
  }
}

MetricReport make_report(std::string name, std::vector<double> per_item, std::size_t bootstrap_samples,
                         std::uint64_t seed) {
  MetricReport r;
  r.name = std::move(name);
  r.per_item = std::move(per_item);
  if (!r.per_item.empty()) {
    r.mean = std::accumulate(r.per_item.begin(), r.per_item.end(), 0.0) /
             static_cast<double>(r.per_item.size());
    const auto ci = bootstrap_mean_interval(r.per_item, bootstrap_samples, seed);
    r.ci95 = std::max(0.0, 0.5 * (ci.high - ci.low));
  }
  return r;
}

std::vector<double> target_distance(const ActivationTrace& trace, const SteeringVector& vector,
                                    std::optional<std::size_t> window) {
  if (trace.d_model() != vector.d_model())
    throw Error(ErrorCode::DimensionMismatch, "trace d_model != steering vector d_model");
  const double mu = vector.stats().mu_plus;
  const double sigma = vector.stats().sigma_plus;
  if (!(sigma > 0.0)) throw Error(ErrorCode::ZeroSigma, "sigma_plus must be positive");
  const auto rows = response_rows(trace, window);
  const std::size_t d = trace.d_model();
  std::vector<double> block;
  block.reserve(rows.size() * d);
  for (auto t : rows) {
    const auto r = trace.row(t);
    block.insert(block.end(), r.begin(), r.end());
  }
  std::vector<double> rho(rows.size());
  kernels::project_rows(block, d, vector.direction(), rho);
  for (auto& x : rho) x = std::abs(x - mu) / sigma;
  return rho;
}

std::vector<double> moving_average(std::span<const double> series, std::size_t window) {
  if (window == 0) throw Error(ErrorCode::InvalidArgument, "moving average window must be >= 1");
  std::vector<double> out(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    const std::size_t lo = i + 1 >= window ? i + 1 - window : 0;
    double s = 0.0;
    for (std::size_t j = lo; j <= i; ++j) s += series[j];
    out[i] = s / static_cast<double>(i - lo + 1);
  }
  return out;
}

std::vector<double> l2_divergence(const ActivationTrace& before, const ActivationTrace& after,
                                  std::optional<std::size_t> window) {
  if (before.d_model() != after.d_model() || before.n_tokens() != after.n_tokens() ||
      !std::equal(before.roles().begin(), before.roles().end(), after.roles().begin()))
    throw Error(ErrorCode::ShapeMismatch, "traces differ in shape or roles");
  const auto rows = response_rows(before, window);
  const std::size_t d = before.d_model();
  std::vector<double> a, b;
  a.reserve(rows.size() * d);
  b.reserve(rows.size() * d);
  for (auto t : rows) {
    const auto ra = after.row(t);
    const auto rb = before.row(t);
    a.insert(a.end(), ra.begin(), ra.end());
    b.insert(b.end(), rb.begin(), rb.end());
  }
  std::vector<double> out(rows.size());
  kernels::row_squared_distance(a, b, d, out);
  for (auto& x : out) x = std::sqrt(x);
  return out;
}

double cross_entropy(std::span<const double> logprobs, std::optional<std::size_t> window) {
  if (logprobs.empty()) throw Error(ErrorCode::EmptySequence, "no logprobs");
  const std::size_t n = window_length(logprobs.size(), window);
  if (n == 0) throw Error(ErrorCode::EmptySequence, "window is zero");
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (logprobs[i] > 0.0) throw Error(ErrorCode::PositiveLogprob, "logprob must be <= 0");
    if (!std::isfinite(logprobs[i])) throw Error(ErrorCode::NonfiniteValue, "logprob");
    sum += logprobs[i];
  }
  return -sum / static_cast<double>(n);
}

std::size_t token_count(const ActivationTrace& trace) { return trace.n_response_tokens(); }

std::size_t token_count(const TurnText& turn) { return turn.tokens.size(); }

double sentence_reuse_rate(const TurnText& current, std::span<const TurnText> history,
                           double threshold) {
  for (const auto& s : current.sentences) embedding_of(s);
  std::vector<Sentence> pool;
  for (const auto& t : history) {
    for (const auto& s : t.sentences) {
      embedding_of(s);
      pool.push_back(s);
    }
  }
  if (current.sentences.empty() || pool.empty()) return 0.0;
  std::size_t reused = 0;
  for (const auto& s : current.sentences) {
    if (best_match(s, pool) > threshold) ++reused;
  }
  return static_cast<double>(reused) / static_cast<double>(current.sentences.size());
}

double cross_turn_repetition(const TurnText& current, std::span<const TurnText> history, std::size_t n) {
  const auto grams = ngrams(current.tokens, n);
  if (grams.empty()) return 0.0;
  std::set<Ngram> unique(grams.begin(), grams.end());
  std::set<Ngram> prior;
  for (const auto& t : history) {
    for (auto& g : ngrams(t.tokens, n)) prior.insert(std::move(g));
  }
  const auto seen = std::count_if(unique.begin(), unique.end(), [&](const Ngram& g) { return prior.count(g) > 0; });
  return static_cast<double>(seen) / static_cast<double>(unique.size());
}

double within_turn_repetition(const TurnText& current, std::size_t n) {
  const auto grams = ngrams(current.tokens, n);
  if (grams.empty()) return 0.0;
  const std::set<Ngram> unique(grams.begin(), grams.end());
  return 1.0 - static_cast<double>(unique.size()) / static_cast<double>(grams.size());
}

double ngram_repetition(const TurnText& current, const std::vector<TurnText>* history, std::size_t n) {
  return history ? cross_turn_repetition(current, *history, n) : within_turn_repetition(current, n);
}

double sentence_f1_similarity(const TurnText& steered, const TurnText& reference) {
  for (const auto& s : steered.sentences) embedding_of(s);
  for (const auto& s : reference.sentences) embedding_of(s);
  if (steered.sentences.empty() || reference.sentences.empty()) return 0.0;
  auto directed = [](const TurnText& from, const TurnText& to) {
    double sum = 0.0;
    for (const auto& s : from.sentences) sum += best_match(s, to.sentences);
    return sum / static_cast<double>(from.sentences.size());
  };
  const double precision = directed(steered, reference);
  const double recall = directed(reference, steered);
  if (!(precision + recall > 0.0)) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

double response_cosine(std::span<const double> steered, std::span<const double> reference) {
  return cosine(steered, reference);
}

Pca2d pca_2d(std::span<const std::vector<double>> embeddings) {
  if (embeddings.size() < 3) throw Error(ErrorCode::EmptyInput, "PCA needs >= 3 vectors");
  const std::size_t n = embeddings.size();
  const std::size_t d = embeddings.front().size();
  if (d == 0) throw Error(ErrorCode::DimensionMismatch, "zero-dimensional embeddings");
  Eigen::MatrixXd x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    if (embeddings[i].size() != d) throw Error(ErrorCode::DimensionMismatch, "embedding dimensions differ");
    for (std::size_t k = 0; k < d; ++k) x(i, k) = embeddings[i][k];
  }
  x.rowwise() -= x.colwise().mean();

  // Work with whichever of X^T X (d x d) or X X^T (n x n) is smaller.
  Eigen::VectorXd eigval;
  Eigen::MatrixXd loadings(d, 2);
  loadings.setZero();
  const double total = x.squaredNorm();
  Pca2d out;
  out.points.assign(n, {0.0, 0.0});
  out.components = {std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  if (total <= 0.0) {
    out.degenerate_rank = true;
    return out;
  }
  if (d <= n) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(x.transpose() * x);
    eigval = es.eigenvalues().reverse();
    const Eigen::MatrixXd vecs = es.eigenvectors().rowwise().reverse();
    loadings.leftCols(std::min<std::size_t>(2, d)) = vecs.leftCols(std::min<std::size_t>(2, d));
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(x * x.transpose());
    eigval = es.eigenvalues().reverse();
    const Eigen::MatrixXd vecs = es.eigenvectors().rowwise().reverse();
    for (int c = 0; c < 2; ++c) {
      if (eigval(c) > 0.0) loadings.col(c) = x.transpose() * vecs.col(c) / std::sqrt(eigval(c));
    }
  }
  const double rank_tol = 1e-12 * total;
  for (int c = 0; c < 2; ++c) {
    const double lambda = c < eigval.size() ? std::max(0.0, eigval(c)) : 0.0;
    if (lambda <= rank_tol) {
      loadings.col(c).setZero();
      out.degenerate_rank = true;
      continue;
    }
    loadings.col(c).normalize();
    for (Eigen::Index k = 0; k < loadings.rows(); ++k) {
      const double v = loadings(k, c);
      if (std::abs(v) > 1e-12) {
        if (v < 0.0) loadings.col(c) *= -1.0;
        break;
      }
    }
    out.explained[c] = lambda / total;
  }
  const Eigen::MatrixXd scores = x * loadings;
  for (std::size_t i = 0; i < n; ++i) out.points[i] = {scores(i, 0), scores(i, 1)};
  for (std::size_t k = 0; k < d; ++k) {
    out.components[0][k] = loadings(k, 0);
    out.components[1][k] = loadings(k, 1);
  }
  return out;
}

std::vector<HistogramBin> projection_histogram(std::span<const double> projections, std::size_t bins) {
  if (projections.empty()) throw Error(ErrorCode::EmptySequence, "histogram of empty sequence");
  if (bins == 0) throw Error(ErrorCode::InvalidArgument, "bins must be >= 1");
  const auto [lo_it, hi_it] = std::minmax_element(projections.begin(), projections.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!std::isfinite(lo) || !std::isfinite(hi)) throw Error(ErrorCode::NonfiniteValue, "projection");
  if (hi == lo) return {HistogramBin{lo, hi, projections.size()}};
  const double width = (hi - lo) / static_cast<double>(bins);
  std::vector<HistogramBin> out(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    out[b].low = lo + width * static_cast<double>(b);
    out[b].high = b + 1 == bins ? hi : lo + width * static_cast<double>(b + 1);
  }
  for (double x : projections) {
    auto b = static_cast<std::size_t>((x - lo) / width);
    b = std::min(b, bins - 1);
    // Edges are recomputed above; keep each value inside its [low, high) bin.
    while (b > 0 && x < out[b].low) --b;
    while (b + 1 < bins && x >= out[b + 1].low) ++b;
    ++out[b].count;
  }
  return out;
}

}  // namespace tokensteer
