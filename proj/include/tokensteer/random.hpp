#pragma once

// Portable seeded randomness. std::mt19937_64 is bit-exact across standard
// libraries; the std:: distributions are not, so uniform/normal/index draws
// are implemented here.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace tokensteer {

inline constexpr const char* kRngName = "mt19937_64+box-muller";

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  /// Seeds from (seed, stream) through std::seed_seq; used for per-resample streams.
  Rng(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, bound) by rejection (no modulo bias).
  std::uint64_t below(std::uint64_t bound);
  double normal();
  std::vector<double> normal_vector(std::size_t n, double sigma = 1.0);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Linear-interpolation percentile (q in [0, 100]) of an ascending-sorted sample.
double percentile_sorted(std::span<const double> sorted, double q);

struct BootstrapInterval {
  double low = 0.0;
  double high = 0.0;
};

/// Percentile bootstrap of the sample mean (resample b uses Rng(seed, b)).
BootstrapInterval bootstrap_mean_interval(std::span<const double> values, std::size_t samples,
                                          std::uint64_t seed, double level = 0.95);

}  // namespace tokensteer
