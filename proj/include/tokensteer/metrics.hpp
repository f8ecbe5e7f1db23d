#pragma once

// Judge-independent evaluation metrics over traces and conversation turns.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tokensteer/types.hpp"

namespace tokensteer {

/// Default response-token window for target distance, L2 divergence and
/// cross-entropy.
inline constexpr std::size_t kDefaultWindow = 50;
inline constexpr double kReuseThreshold = 0.8;
inline constexpr std::size_t kDefaultNgram = 4;

struct Sentence {
  std::string text;
  std::optional<std::vector<double>> embedding;

  friend bool operator==(const Sentence&, const Sentence&) = default;
};

struct TurnText {
  int turn_index = 0;
  std::vector<Sentence> sentences;
  std::vector<std::string> tokens;

  friend bool operator==(const TurnText&, const TurnText&) = default;
};

/// Whitespace split, lowercase, strip leading/trailing ASCII punctuation.
std::vector<std::string> tokenize(std::string_view text);
/// Splits after '.', '!' or '?' when followed by whitespace or end of text.
std::vector<std::string> split_sentences(std::string_view text);
/// Builds a turn from raw text (no embeddings).
TurnText make_turn(int turn_index, std::string_view text);
/// Checks turn indices and that all present embeddings share one dimension.
void validate_conversation(std::span<const TurnText> turns);

struct MetricReport {
  std::string name;
  std::vector<double> per_item;
  double mean = 0.0;
  double ci95 = 0.0;  // half-width of the percentile bootstrap interval
};

MetricReport make_report(std::string name, std::vector<double> per_item,
                         std::size_t bootstrap_samples = 1000, std::uint64_t seed = 42);

/// |rho - mu+| / sigma+ per RESPONSE token, first min(T, window) of them.
std::vector<double> target_distance(const ActivationTrace& trace, const SteeringVector& vector,
                                    std::optional<std::size_t> window = kDefaultWindow);

/// Trailing mean with partial windows at the head; output length = input length.
std::vector<double> moving_average(std::span<const double> series, std::size_t window);

/// ||h' - h||_2 per RESPONSE token, first min(T, window) of them.
std::vector<double> l2_divergence(const ActivationTrace& before, const ActivationTrace& after,
                                  std::optional<std::size_t> window = kDefaultWindow);

/// H = -(1/T) sum log P over the first min(T, window) logprobs.
double cross_entropy(std::span<const double> logprobs,
                     std::optional<std::size_t> window = kDefaultWindow);

std::size_t token_count(const ActivationTrace& trace);
std::size_t token_count(const TurnText& turn);

/// Fraction of current sentences whose best cosine to any prior-turn sentence
/// is strictly above `threshold`.
double sentence_reuse_rate(const TurnText& current, std::span<const TurnText> history,
                           double threshold = kReuseThreshold);

/// |unique n-grams(current) intersect prior n-grams| / |unique n-grams(current)|.
double cross_turn_repetition(const TurnText& current, std::span<const TurnText> history,
                             std::size_t n = kDefaultNgram);
/// 1 - |unique n-grams| / |total n-grams| within one turn.
double within_turn_repetition(const TurnText& current, std::size_t n = kDefaultNgram);
/// Cross-turn rate when `history` is given, within-turn otherwise.
double ngram_repetition(const TurnText& current, const std::vector<TurnText>* history,
                        std::size_t n = kDefaultNgram);

/// Harmonic mean of nearest-neighbour precision and recall over sentence embeddings.
double sentence_f1_similarity(const TurnText& steered, const TurnText& reference);

double response_cosine(std::span<const double> steered, std::span<const double> reference);

struct Pca2d {
  std::vector<std::array<double, 2>> points;
  std::array<double, 2> explained{0.0, 0.0};
  std::array<std::vector<double>, 2> components;
  bool degenerate_rank = false;  // rank < 2: second component zeroed
};

Pca2d pca_2d(std::span<const std::vector<double>> embeddings);

struct HistogramBin {
  double low = 0.0;
  double high = 0.0;
  std::size_t count = 0;
};

std::vector<HistogramBin> projection_histogram(std::span<const double> projections,
                                               std::size_t bins);

}  // namespace tokensteer
