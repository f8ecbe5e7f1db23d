#include "tokensteer/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "tokensteer/error.hpp"

namespace tokensteer {

Rng::Rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  engine_.seed(seq);
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t bound) {
  if (bound == 0) throw Error(ErrorCode::InvalidArgument, "Rng::below(0)");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % bound;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::vector<double> Rng::normal_vector(std::size_t n, double sigma) {
  std::vector<double> out(n);
  for (auto& x : out) x = sigma * normal();
  return out;
}

double percentile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw Error(ErrorCode::EmptySequence, "percentile of empty sample");
  const double pos = (q / 100.0) * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

BootstrapInterval bootstrap_mean_interval(std::span<const double> values, std::size_t samples,
                                          std::uint64_t seed, double level) {
  if (values.empty()) throw Error(ErrorCode::EmptySequence, "bootstrap of empty sample");
  if (samples == 0) throw Error(ErrorCode::InvalidArgument, "bootstrap needs >= 1 resample");
  std::vector<double> means(samples);
  const std::size_t n = values.size();
  for (std::size_t b = 0; b < samples; ++b) {
    Rng rng(seed, b);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += values[rng.below(n)];
    means[b] = sum / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  const double tail = (1.0 - level) * 50.0;
  return {percentile_sorted(means, tail), percentile_sorted(means, 100.0 - tail)};
}

}  // namespace tokensteer
