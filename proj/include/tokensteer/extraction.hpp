#pragma once

// Steering-vector extraction from contrastive response-averaged embeddings.
//
// The probe minimises
//   J(w, b) = 1/2 ||w||^2 + C * sum_i log(1 + exp(-y_i (w.x_i + b)))
// over positives (y = +1) and negatives (y = -1), in raw activation space.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tokensteer/types.hpp"

namespace tokensteer {

struct ExtractionConfig {
  double regularization_c = 1.0;
  int max_iterations = 1000;
  double gradient_tolerance = 1e-6;
  std::uint64_t seed = 42;

  void validate() const;
};

/// L-BFGS fit. Throws on empty/mismatched input; a non-converged result is
/// returned with `converged == false`.
RawClassifier fit_classifier(std::span<const ContrastivePair> pairs, const ExtractionConfig& config);

/// Class projection statistics on a unit direction (sample SDs, pooled-SD Cohen's d).
ProjectionStats projection_stats(std::span<const ContrastivePair> pairs,
                                 std::span<const double> direction);
/// Same statistics from precomputed projections.
ProjectionStats projection_stats(std::span<const double> plus, std::span<const double> minus);

/// direction = w/||w||, delta_mu from the projections, b' = b*delta_mu/||w||,
/// boundary = -b'/|delta_mu|.
SteeringVector build_steering_vector(const RawClassifier& classifier,
                                     std::span<const ContrastivePair> pairs, std::string trait,
                                     int layer);

/// Normalised mean(positive) - mean(negative).
std::vector<double> caa_direction(std::span<const ContrastivePair> pairs);

/// Steering vector on the CAA direction; its boundary is the midpoint of the
/// two class mean projections.
SteeringVector build_caa_steering_vector(std::span<const ContrastivePair> pairs, std::string trait,
                                         int layer);

/// Cosine of two unit vectors.
double direction_agreement(std::span<const double> a, std::span<const double> b);

/// fit_classifier + build_steering_vector, with fit diagnostics in meta.
SteeringVector extract_steering_vector(std::span<const ContrastivePair> pairs,
                                       const ExtractionConfig& config, std::string trait, int layer);

}  // namespace tokensteer
