#include "tokensteer/simulator.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <sstream>

#include "tokensteer/error.hpp"
#include "tokensteer/random.hpp"

namespace tokensteer {
namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) acc += a[k] * b[k];
  return acc;
}

std::vector<double> unit_or_basis(const std::vector<double>& v, std::size_t d) {
  if (v.empty()) {
    std::vector<double> e(d, 0.0);
    e[0] = 1.0;
    return e;
  }
  return v;
}

void check_direction(const std::vector<double>& v, std::size_t d) {
  if (v.empty()) return;
  if (v.size() != d) throw Error(ErrorCode::DimensionMismatch, "planted direction length != d_model");
  if (std::abs(std::sqrt(dot(v, v)) - 1.0) > SteeringVector::kTolerance)
    throw Error(ErrorCode::InvariantViolation, "planted direction is not unit norm");
}

// Gaussian noise with the u-component removed.
std::vector<double> orthogonal_noise(Rng& rng, std::span<const double> u, double sigma) {
  auto g = rng.normal_vector(u.size(), sigma);
  const double along = dot(g, u);
  for (std::size_t k = 0; k < g.size(); ++k) g[k] -= along * u[k];
  return g;
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, std::string("field '") + key + "': " + e.what());
  }
}

}  // namespace

void SyntheticSpec::validate() const {
  if (d_model == 0) throw Error(ErrorCode::InvalidArgument, "d_model must be positive");
  if (n_per_class < 2) throw Error(ErrorCode::InvalidArgument, "n_per_class must be >= 2");
  if (!(separation_d > 0.0)) throw Error(ErrorCode::InvalidArgument, "separation_d must be positive");
  if (!(noise_sigma >= 0.0)) throw Error(ErrorCode::InvalidArgument, "noise_sigma must be >= 0");
  check_direction(planted_direction, d_model);
}

std::vector<double> SyntheticSpec::direction() const { return unit_or_basis(planted_direction, d_model); }

std::vector<ContrastivePair> generate_pairs(const SyntheticSpec& spec) {
  spec.validate();
  const auto u = spec.direction();
  Rng rng(spec.seed);
  std::vector<ContrastivePair> pairs;
  pairs.reserve(spec.n_per_class);
  auto sample = [&](double mean) {
    const double along = mean + rng.normal();
    auto v = orthogonal_noise(rng, u, spec.noise_sigma);
    for (std::size_t k = 0; k < v.size(); ++k) v[k] += along * u[k];
    return v;
  };
  for (std::size_t i = 0; i < spec.n_per_class; ++i) {
    ContrastivePair p;
    p.positive = sample(0.5 * spec.separation_d);
    p.negative = sample(-0.5 * spec.separation_d);
    p.scenario_id = "synthetic-" + std::to_string(i);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

std::string_view to_string(Condition c) noexcept {
  return c == Condition::Aligned ? "ALIGNED" : "MALICIOUS";
}

Condition parse_condition(std::string_view name) {
  std::string u(name);
  for (char& c : u) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (u == "ALIGNED") return Condition::Aligned;
  if (u == "MALICIOUS") return Condition::Malicious;
  throw Error(ErrorCode::InvalidArgument, "unknown condition '" + std::string(name) + "'");
}

void ToyProcessSpec::validate() const {
  if (d_model == 0 || n_turns == 0 || tokens_per_turn == 0)
    throw Error(ErrorCode::InvalidArgument, "d_model, n_turns and tokens_per_turn must be positive");
  if (layer < 0) throw Error(ErrorCode::InvalidArgument, "negative layer");
  if (!(noise_sigma >= 0.0)) throw Error(ErrorCode::InvalidArgument, "noise_sigma must be >= 0");
  if (sentence_tokens == 0) throw Error(ErrorCode::InvalidArgument, "sentence_tokens must be positive");
  for (std::size_t i = 1; i < emission_thresholds.size(); ++i) {
    if (!(emission_thresholds[i] > emission_thresholds[i - 1]))
      throw Error(ErrorCode::InvariantViolation, "emission thresholds must be strictly increasing");
  }
  check_direction(direction, d_model);
}

std::vector<double> ToyProcessSpec::unit_direction() const { return unit_or_basis(direction, d_model); }

std::size_t emission_bucket(std::span<const double> thresholds, double projection) noexcept {
  return static_cast<std::size_t>(
      std::upper_bound(thresholds.begin(), thresholds.end(), projection) - thresholds.begin());
}

std::vector<ActivationTrace> run_toy_process(const ToyProcessSpec& spec, Condition condition,
                                             const std::optional<SteeringConfig>& steering) {
  spec.validate();
  if (steering) {
    if (steering->vector.d_model() != spec.d_model)
      throw Error(ErrorCode::DimensionMismatch, "steering vector d_model != toy d_model");
    if (steering->vector.layer() != spec.layer)
      throw Error(ErrorCode::LayerMismatch, "steering vector layer != toy layer");
  }
  const auto u = spec.unit_direction();
  const double drift = condition == Condition::Malicious ? spec.drift : spec.aligned_drift;
  const std::size_t vocab = spec.emission_thresholds.size() + 1;
  const std::size_t ref_bucket = emission_bucket(spec.emission_thresholds, spec.initial_projection);
  // log-softmax of -|k - ref| over the bucket vocabulary
  std::vector<double> ref_logprob(vocab);
  {
    double z = 0.0;
    for (std::size_t k = 0; k < vocab; ++k)
      z += std::exp(-std::abs(static_cast<double>(k) - static_cast<double>(ref_bucket)));
    for (std::size_t k = 0; k < vocab; ++k)
      ref_logprob[k] = -std::abs(static_cast<double>(k) - static_cast<double>(ref_bucket)) - std::log(z);
  }

  Rng rng(spec.seed);
  std::vector<double> h = orthogonal_noise(rng, u, spec.noise_sigma);
  for (std::size_t k = 0; k < h.size(); ++k) h[k] += spec.initial_projection * u[k];

  std::optional<OnlineSteerer> hook;
  if (steering) hook.emplace(*steering);

  std::vector<ActivationTrace> turns;
  const std::size_t per_turn = spec.prompt_tokens_per_turn + spec.tokens_per_turn;
  for (std::size_t turn = 0; turn < spec.n_turns; ++turn) {
    std::vector<double> hidden;
    hidden.reserve(per_turn * spec.d_model);
    std::vector<Role> roles;
    std::vector<double> logprobs;
    std::ostringstream emitted;
    for (std::size_t t = 0; t < per_turn; ++t) {
      const Role role = t < spec.prompt_tokens_per_turn ? Role::Prompt : Role::Response;
      std::vector<double> state = hook ? hook->feed(h, role) : h;
      if (role == Role::Response) {
        const auto tok = emission_bucket(spec.emission_thresholds, dot(state, u));
        if (emitted.tellp() > 0) emitted << ' ';
        emitted << tok;
        logprobs.push_back(ref_logprob[tok]);
      } else {
        logprobs.push_back(0.0);
      }
      hidden.insert(hidden.end(), state.begin(), state.end());
      roles.push_back(role);

      auto eps = orthogonal_noise(rng, u, spec.noise_sigma);
      for (std::size_t k = 0; k < h.size(); ++k) h[k] = h[k] + drift * u[k] + eps[k];
    }
    Meta meta{{"generator", "toy_process"},
              {"condition", std::string(to_string(condition))},
              {"seed", std::to_string(spec.seed)},
              {"rng", kRngName},
              {"turn_index", std::to_string(turn)},
              {"emitted_tokens", emitted.str()}};
    if (steering) {
      std::ostringstream alpha;
      alpha.precision(17);
      alpha << steering->coefficient;
      meta["steering_method"] = std::string(to_string(steering->method));
      meta["steering_alpha"] = alpha.str();
      meta["steering_position"] = std::string(to_string(steering->position));
    }
    turns.emplace_back(spec.layer, spec.d_model, std::move(hidden), std::move(roles),
                       std::move(logprobs), std::move(meta));
  }
  return turns;
}

std::vector<TurnText> toy_turn_texts(std::span<const ActivationTrace> turns,
                                     std::size_t sentence_tokens) {
  if (sentence_tokens == 0) throw Error(ErrorCode::InvalidArgument, "sentence_tokens must be positive");
  std::vector<TurnText> out;
  for (std::size_t i = 0; i < turns.size(); ++i) {
    const auto& trace = turns[i];
    TurnText turn;
    turn.turn_index = static_cast<int>(i);
    if (auto it = trace.meta().find("emitted_tokens"); it != trace.meta().end()) {
      std::istringstream ss(it->second);
      std::string id;
      while (ss >> id) turn.tokens.push_back("w" + id);
    }
    std::vector<std::size_t> response_rows;
    for (std::size_t t = 0; t < trace.n_tokens(); ++t) {
      if (trace.roles()[t] == Role::Response) response_rows.push_back(t);
    }
    for (std::size_t start = 0; start < response_rows.size(); start += sentence_tokens) {
      const std::size_t end = std::min(start + sentence_tokens, response_rows.size());
      Sentence s;
      std::vector<double> mean(trace.d_model(), 0.0);
      for (std::size_t r = start; r < end; ++r) {
        const auto row = trace.row(response_rows[r]);
        for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += row[k];
      }
      for (auto& x : mean) x /= static_cast<double>(end - start);
      for (std::size_t r = start; r < end && r < turn.tokens.size(); ++r) {
        if (r > start) s.text += ' ';
        s.text += turn.tokens[r];
      }
      s.embedding = std::move(mean);
      turn.sentences.push_back(std::move(s));
    }
    out.push_back(std::move(turn));
  }
  return out;
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  s.d_model = get_or(j, "d_model", s.d_model);
  s.n_per_class = get_or(j, "n_per_class", s.n_per_class);
  s.planted_direction = get_or(j, "planted_direction", s.planted_direction);
  s.separation_d = get_or(j, "separation_d", s.separation_d);
  s.noise_sigma = get_or(j, "noise_sigma", s.noise_sigma);
  s.seed = get_or(j, "seed", s.seed);
  s.validate();
  return s;
}

ToyProcessSpec toy_spec_from_json(const nlohmann::json& j) {
  ToyProcessSpec s;
  s.d_model = get_or(j, "d_model", s.d_model);
  s.n_turns = get_or(j, "n_turns", s.n_turns);
  s.tokens_per_turn = get_or(j, "tokens_per_turn", s.tokens_per_turn);
  s.prompt_tokens_per_turn = get_or(j, "prompt_tokens_per_turn", s.prompt_tokens_per_turn);
  s.drift = get_or(j, "drift", s.drift);
  s.aligned_drift = get_or(j, "aligned_drift", s.aligned_drift);
  s.emission_thresholds = get_or(j, "emission_thresholds", s.emission_thresholds);
  s.direction = get_or(j, "direction", s.direction);
  s.initial_projection = get_or(j, "initial_projection", s.initial_projection);
  s.noise_sigma = get_or(j, "noise_sigma", s.noise_sigma);
  s.layer = get_or(j, "layer", s.layer);
  s.sentence_tokens = get_or(j, "sentence_tokens", s.sentence_tokens);
  s.seed = get_or(j, "seed", s.seed);
  s.validate();
  return s;
}

nlohmann::json to_json(const SyntheticSpec& s) {
  return {{"d_model", s.d_model},           {"n_per_class", s.n_per_class},
          {"planted_direction", s.planted_direction}, {"separation_d", s.separation_d},
          {"noise_sigma", s.noise_sigma},   {"seed", s.seed}};
}

nlohmann::json to_json(const ToyProcessSpec& s) {
  return {{"d_model", s.d_model},
          {"n_turns", s.n_turns},
          {"tokens_per_turn", s.tokens_per_turn},
          {"prompt_tokens_per_turn", s.prompt_tokens_per_turn},
          {"drift", s.drift},
          {"aligned_drift", s.aligned_drift},
          {"emission_thresholds", s.emission_thresholds},
          {"direction", s.direction},
          {"initial_projection", s.initial_projection},
          {"noise_sigma", s.noise_sigma},
          {"layer", s.layer},
          {"sentence_tokens", s.sentence_tokens},
          {"seed", s.seed}};
}

}  // namespace tokensteer
