#include "tokensteer/elo.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <exception>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "tokensteer/error.hpp"
#include "tokensteer/random.hpp"

namespace tokensteer {
namespace {

struct Outcome {
  std::size_t winner;
  std::size_t loser;
};

struct Fit {
  std::vector<double> theta;  // natural-log units, mean 0 per component
  std::vector<int> component;
  bool separated = false;
  bool disconnected = false;
};

double log_sigmoid(double x) {
  return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<int> components(std::size_t k, const std::vector<double>& wins) {
  std::vector<int> comp(k, -1);
  int next = 0;
  for (std::size_t s = 0; s < k; ++s) {
    if (comp[s] >= 0) continue;
    comp[s] = next;
    std::vector<std::size_t> stack{s};
    while (!stack.empty()) {
      const auto i = stack.back();
      stack.pop_back();
      for (std::size_t j = 0; j < k; ++j) {
        if (comp[j] < 0 && wins[i * k + j] + wins[j * k + i] > 0.0) {
          comp[j] = next;
          stack.push_back(j);
        }
      }
    }
    ++next;
  }
  return comp;
}

bool strongly_connected(const std::vector<std::size_t>& members, std::size_t k,
                        const std::vector<double>& wins) {
  for (int direction = 0; direction < 2; ++direction) {
    std::vector<char> seen(members.size(), 0);
    std::vector<std::size_t> stack{0};
    seen[0] = 1;
    while (!stack.empty()) {
      const auto a = stack.back();
      stack.pop_back();
      for (std::size_t b = 0; b < members.size(); ++b) {
        const std::size_t i = members[a], j = members[b];
        const double w = direction == 0 ? wins[i * k + j] : wins[j * k + i];
        if (!seen[b] && w > 0.0) {
          seen[b] = 1;
          stack.push_back(b);
        }
      }
    }
    if (std::count(seen.begin(), seen.end(), 0) > 0) return false;
  }
  return true;
}

// Maximises sum w_ij log sigma(t_i - t_j) - lambda/2 sum (t_i - mean)^2 over one
// component. The extra -1/2 (sum t)^2 term only pins the gauge to mean zero.
std::vector<double> fit_component(const std::vector<std::size_t>& members, std::size_t k,
                                  const std::vector<double>& wins, double lambda) {
  const auto c = static_cast<Eigen::Index>(members.size());
  Eigen::MatrixXd w(c, c);
  for (Eigen::Index a = 0; a < c; ++a)
    for (Eigen::Index b = 0; b < c; ++b) w(a, b) = wins[members[a] * k + members[b]];

  auto objective = [&](const Eigen::VectorXd& t) {
    double f = 0.0;
    for (Eigen::Index a = 0; a < c; ++a)
      for (Eigen::Index b = 0; b < c; ++b)
        if (w(a, b) > 0.0) f += w(a, b) * log_sigmoid(t(a) - t(b));
    const double mean = t.mean();
    f -= 0.5 * lambda * (t.array() - mean).matrix().squaredNorm();
    f -= 0.5 * t.sum() * t.sum();
    return f;
  };

  Eigen::VectorXd t = Eigen::VectorXd::Zero(c);
  double f = objective(t);
  const Eigen::MatrixXd centering =
      Eigen::MatrixXd::Identity(c, c) - Eigen::MatrixXd::Constant(c, c, 1.0 / static_cast<double>(c));
  for (int iter = 0; iter < 500; ++iter) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(c);
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(c, c);  // negative Hessian
    for (Eigen::Index a = 0; a < c; ++a) {
      for (Eigen::Index b = a + 1; b < c; ++b) {
        const double n = w(a, b) + w(b, a);
        if (n <= 0.0) continue;
        const double p = sigmoid(t(a) - t(b));
        g(a) += w(a, b) - n * p;
        g(b) += w(b, a) - n * (1.0 - p);
        const double q = n * p * (1.0 - p);
        h(a, a) += q;
        h(b, b) += q;
        h(a, b) -= q;
        h(b, a) -= q;
      }
    }
    g -= lambda * (centering * t);
    g -= Eigen::VectorXd::Constant(c, t.sum());
    h += lambda * centering;
    h += Eigen::MatrixXd::Constant(c, c, 1.0);
    const Eigen::VectorXd step = h.ldlt().solve(g);
    if (!step.allFinite()) throw Error(ErrorCode::NotConverged, "Bradley-Terry Newton step failed");
    double scale = 1.0;
    Eigen::VectorXd next = t + step;
    double fn = objective(next);
    while (fn < f && scale > 1e-10) {
      scale *= 0.5;
      next = t + scale * step;
      fn = objective(next);
    }
    const double moved = (scale * step).cwiseAbs().maxCoeff();
    if (fn >= f) {
      t = next;
      f = fn;
    }
    if (moved < 1e-13 || g.cwiseAbs().maxCoeff() < 1e-12) break;
  }
  std::vector<double> out(members.size());
  const double mean = t.mean();
  for (Eigen::Index a = 0; a < c; ++a) out[a] = t(a) - mean;
  return out;
}

Fit fit_counts(std::size_t k, const std::vector<double>& wins) {
  Fit fit;
  fit.theta.assign(k, 0.0);
  fit.component = components(k, wins);
  const int n_comp = *std::max_element(fit.component.begin(), fit.component.end()) + 1;
  int active = 0;
  for (int comp = 0; comp < n_comp; ++comp) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < k; ++i)
      if (fit.component[i] == comp) members.push_back(i);
    if (members.size() < 2) continue;
    ++active;
    const bool finite = strongly_connected(members, k, wins);
    if (!finite) fit.separated = true;
    const auto theta = fit_component(members, k, wins, finite ? 0.0 : kEloRidge);
    for (std::size_t a = 0; a < members.size(); ++a) fit.theta[members[a]] = theta[a];
  }
  fit.disconnected = active > 1;
  return fit;
}

struct Prepared {
  std::vector<Outcome> outcomes;
  std::vector<std::size_t> wins;
  std::vector<std::size_t> losses;
};

Prepared prepare(const Tournament& t) {
  t.validate();
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < t.players.size(); ++i) index.emplace(t.players[i], i);
  Prepared p;
  p.wins.assign(t.players.size(), 0);
  p.losses.assign(t.players.size(), 0);
  for (const auto& m : t.matches) {
    const auto a = index.at(m.player_a);
    const auto b = index.at(m.player_b);
    const Outcome o = m.winner == Winner::A ? Outcome{a, b} : Outcome{b, a};
    ++p.wins[o.winner];
    ++p.losses[o.loser];
    p.outcomes.push_back(o);
  }
  return p;
}

RatingTable make_table(const Tournament& t, const Prepared& p, const Fit& fit) {
  RatingTable table;
  table.separated = fit.separated;
  table.disconnected = fit.disconnected;
  for (std::size_t i = 0; i < t.players.size(); ++i) {
    const double r = t.anchor_rating + t.scale * fit.theta[i];
    table.players.push_back(PlayerRating{t.players[i], r, r, r, p.wins[i], p.losses[i], fit.component[i]});
  }
  return table;
}

std::vector<double> count_matrix(std::size_t k, std::span<const Outcome> outcomes) {
  std::vector<double> wins(k * k, 0.0);
  for (const auto& o : outcomes) wins[o.winner * k + o.loser] += 1.0;
  return wins;
}

}  // namespace

void Tournament::validate() const {
  if (players.size() < 2) throw Error(ErrorCode::InvalidArgument, "a tournament needs >= 2 players");
  std::set<std::string> seen;
  for (const auto& p : players)
    if (!seen.insert(p).second) throw Error(ErrorCode::InvalidArgument, "duplicate player '" + p + "'");
  for (const auto& m : matches) {
    if (!seen.count(m.player_a)) throw Error(ErrorCode::UnknownPlayer, "unknown player '" + m.player_a + "'");
    if (!seen.count(m.player_b)) throw Error(ErrorCode::UnknownPlayer, "unknown player '" + m.player_b + "'");
    if (m.player_a == m.player_b) throw Error(ErrorCode::InvalidArgument, "player matched against itself");
  }
  if (!(scale > 0.0) || !std::isfinite(scale)) throw Error(ErrorCode::InvalidArgument, "scale must be positive");
  if (!std::isfinite(anchor_rating)) throw Error(ErrorCode::NonfiniteValue, "anchor rating");
  if (bootstrap_samples == 0) throw Error(ErrorCode::InvalidArgument, "bootstrap_samples must be >= 1");
}

const PlayerRating& RatingTable::at(std::string_view name) const {
  for (const auto& p : players)
    if (p.name == name) return p;
  throw Error(ErrorCode::UnknownPlayer, "unknown player '" + std::string(name) + "'");
}

double RatingTable::win_probability(std::string_view a, std::string_view b, double scale) const {
  return sigmoid((at(a).rating - at(b).rating) / scale);
}

RatingTable fit_bradley_terry(const Tournament& t) {
  const auto p = prepare(t);
  return make_table(t, p, fit_counts(t.players.size(), count_matrix(t.players.size(), p.outcomes)));
}

RatingTable bootstrap_ci(const Tournament& t, std::size_t workers) {
  const auto p = prepare(t);
  const std::size_t k = t.players.size();
  RatingTable table = make_table(t, p, fit_counts(k, count_matrix(k, p.outcomes)));
  const std::size_t n_samples = t.bootstrap_samples;
  const std::size_t m = p.outcomes.size();
  if (m == 0) return table;

  std::vector<double> draws(n_samples * k);
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, n_samples);
  std::vector<std::exception_ptr> errors(workers);
  auto run = [&](std::size_t worker) {
    try {
      std::vector<Outcome> sample(m);
      for (std::size_t b = worker; b < n_samples; b += workers) {
        Rng rng(t.seed, b);
        for (auto& o : sample) o = p.outcomes[rng.below(m)];
        const auto fit = fit_counts(k, count_matrix(k, sample));
        for (std::size_t i = 0; i < k; ++i) draws[b * k + i] = t.anchor_rating + t.scale * fit.theta[i];
      }
    } catch (...) {
      errors[worker] = std::current_exception();
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<double> column(n_samples);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t b = 0; b < n_samples; ++b) column[b] = draws[b * k + i];
    std::sort(column.begin(), column.end());
    auto& pr = table.players[i];
    pr.ci_low = std::min(percentile_sorted(column, 2.5), pr.rating);
    pr.ci_high = std::max(percentile_sorted(column, 97.5), pr.rating);
  }
  return table;
}

Tournament tournament_from_sweep(std::span<const MatchRecord> matches,
                                 const std::optional<std::vector<std::string>>& players) {
  if (matches.empty()) throw Error(ErrorCode::EmptyInput, "no judge decisions");
  Tournament t;
  if (players) {
    t.players = *players;
  } else {
    std::set<std::string> seen;
    for (const auto& m : matches)
      for (const auto* name : {&m.player_a, &m.player_b})
        if (seen.insert(*name).second) t.players.push_back(*name);
  }
  t.matches.assign(matches.begin(), matches.end());
  t.validate();
  return t;
}

nlohmann::json to_json(const RatingTable& table) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& p : table.players) {
    rows.push_back({{"player", p.name},
                    {"rating", p.rating},
                    {"ci_low", p.ci_low},
                    {"ci_high", p.ci_high},
                    {"wins", p.wins},
                    {"losses", p.losses},
                    {"component", p.component}});
  }
  return {{"players", rows}, {"separated", table.separated}, {"disconnected", table.disconnected}};
}

std::string to_csv(const RatingTable& table) {
  std::ostringstream out;
  out.precision(17);
  out << "player,rating,ci_low,ci_high,wins,losses,component\n";
  for (const auto& p : table.players) {
    out << p.name << ',' << p.rating << ',' << p.ci_low << ',' << p.ci_high << ',' << p.wins << ','
        << p.losses << ',' << p.component << '\n';
  }
  return out.str();
}

}  // namespace tokensteer
