#pragma once

// Synthetic data with a planted trait direction, plus a toy autoregressive
// hidden-state process for exercising steering end to end.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "json.hpp"
#include "tokensteer/metrics.hpp"
#include "tokensteer/steering.hpp"
#include "tokensteer/types.hpp"

namespace tokensteer {

/// Contrastive classes: projection onto the planted direction is N(+-d/2, 1)
/// per class (so the population Cohen's d is `separation_d`), and the
/// orthogonal complement carries isotropic N(0, noise_sigma^2) noise.
struct SyntheticSpec {
  std::size_t d_model = 64;
  std::size_t n_per_class = 500;
  std::vector<double> planted_direction;  // empty: first basis vector
  double separation_d = 4.0;
  double noise_sigma = 1.0;
  std::uint64_t seed = 42;

  void validate() const;
  std::vector<double> direction() const;
};

std::vector<ContrastivePair> generate_pairs(const SyntheticSpec& spec);

enum class Condition { Aligned, Malicious };

std::string_view to_string(Condition c) noexcept;
Condition parse_condition(std::string_view name);

/// Linear latent process h_{t+1} = h_t + drift * u + eps_t with eps_t
/// orthogonal to u. Each token's state passes through the steering hook
/// before emission; the latent itself is not fed back.
struct ToyProcessSpec {
  std::size_t d_model = 64;
  std::size_t n_turns = 3;
  std::size_t tokens_per_turn = 32;
  std::size_t prompt_tokens_per_turn = 4;
  double drift = -0.1;          // per-token drift under MALICIOUS
  double aligned_drift = 0.0;   // per-token drift under ALIGNED
  std::vector<double> emission_thresholds{-1.0, 0.0, 1.0, 2.0};
  std::vector<double> direction;  // empty: first basis vector
  double initial_projection = 2.0;
  double noise_sigma = 0.1;
  int layer = 0;
  std::size_t sentence_tokens = 8;  // toy "sentence" length for text metrics
  std::uint64_t seed = 42;

  void validate() const;
  std::vector<double> unit_direction() const;
};

/// One trace per turn. Meta records condition, seed, generator and the
/// emitted token ids; RESPONSE tokens carry logprobs under a fixed reference
/// distribution centred on the initial bucket.
std::vector<ActivationTrace> run_toy_process(const ToyProcessSpec& spec, Condition condition,
                                             const std::optional<SteeringConfig>& steering);

/// Bucket index of a projection against sorted thresholds.
std::size_t emission_bucket(std::span<const double> thresholds, double projection) noexcept;

/// Text view of toy turns: tokens "w<id>", sentences of `sentence_tokens`
/// tokens embedded as the mean hidden state of those tokens.
std::vector<TurnText> toy_turn_texts(std::span<const ActivationTrace> turns,
                                     std::size_t sentence_tokens);

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);
ToyProcessSpec toy_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SyntheticSpec& s);
nlohmann::json to_json(const ToyProcessSpec& s);

}  // namespace tokensteer
