#pragma once

// Bradley-Terry ratings for pairwise judge tournaments, on the Elo scale:
// P(A beats B) = 1 / (1 + 10^(-(R_A - R_B)/400)).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tokensteer/types.hpp"

namespace tokensteer {

inline const double kEloScale = 400.0 / std::log(10.0);
inline constexpr double kEloRidge = 1e-6;

struct Tournament {
  std::vector<std::string> players;
  std::vector<MatchRecord> matches;
  double anchor_rating = 1500.0;
  double scale = kEloScale;
  std::size_t bootstrap_samples = 1000;
  std::uint64_t seed = 42;

  void validate() const;
};

struct PlayerRating {
  std::string name;
  double rating = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t wins = 0;
  std::size_t losses = 0;
  int component = 0;  // index of the player's connected component
};

struct RatingTable {
  std::vector<PlayerRating> players;  // tournament order
  bool separated = false;     // some component had no finite MLE; ridge applied
  bool disconnected = false;  // more than one component, each anchored separately

  const PlayerRating& at(std::string_view name) const;
  double win_probability(std::string_view a, std::string_view b, double scale = kEloScale) const;
};

/// Point ratings. Components are fitted independently and each is shifted to
/// mean `anchor_rating`. CIs are set to the point estimate.
RatingTable fit_bradley_terry(const Tournament& t);

/// Point ratings plus 2.5/97.5 percentile intervals over match resamples.
/// Resample b draws from Rng(seed, b); `workers` == 0 uses all cores.
RatingTable bootstrap_ci(const Tournament& t, std::size_t workers = 0);

/// Players default to first-appearance order. Throws UnknownPlayer when a
/// match names someone outside `players`, EmptyInput on no matches.
Tournament tournament_from_sweep(std::span<const MatchRecord> matches,
                                 const std::optional<std::vector<std::string>>& players = std::nullopt);

nlohmann::json to_json(const RatingTable& table);
std::string to_csv(const RatingTable& table);

}  // namespace tokensteer
