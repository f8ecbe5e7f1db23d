#include "tokensteer/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "tokensteer/error.hpp"
#include "tokensteer/extraction.hpp"
#include "tokensteer/io.hpp"
#include "tokensteer/metrics.hpp"
#include "tokensteer/steering.hpp"

namespace tokensteer {
namespace {

using nlohmann::json;

constexpr std::size_t kTrajectorySmoothing = 8;

bool feasible(const SweepRecord& r, double aligned_coherence) {
  // 90% floor, 10c >= 9a
  return !is_baseline(r.method) && r.trait_mean && r.coherence_mean &&
         10.0 * *r.coherence_mean >= 9.0 * aligned_coherence;
}

// True when a ranks strictly ahead of b.
bool ranks_ahead(const SweepRecord& a, const SweepRecord& b) {
  auto key = [](const SweepRecord& r) {
    return std::make_tuple(-*r.trait_mean, -*r.coherence_mean, *r.layer, std::abs(*r.coefficient),
                           static_cast<int>(*r.position), *r.coefficient, static_cast<int>(r.method));
  };
  return key(a) < key(b);
}

std::string cell_key(const SweepRecord& r) {
  std::ostringstream k;
  k.precision(17);
  k << to_string(r.method);
  if (!is_baseline(r.method)) {
    k << '|' << (r.layer ? std::to_string(*r.layer) : "-") << '|';
    if (r.coefficient) k << *r.coefficient;
    k << '|' << (r.position ? to_string(*r.position) : "-");
  }
  return k.str();
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, std::string("field '") + key + "': " + e.what());
  }
}

int parse_layer_key(const std::string& s) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::SchemaMismatch, "layer key '" + s + "' is not an integer");
  }
}

std::string fmt(double x) {
  std::ostringstream s;
  s.precision(17);
  s << x;
  return s.str();
}

std::string fmt(const std::optional<double>& x) { return x ? fmt(*x) : std::string(); }

std::string cell_prefix(const SweepRecord& r) {
  std::string out(to_string(r.method));
  out += ',';
  if (r.position) out += to_string(*r.position);
  out += ',';
  if (r.layer) out += std::to_string(*r.layer);
  out += ',';
  out += fmt(r.coefficient);
  return out;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

struct LayerInputs {
  std::optional<SteeringVector> vector;
  std::vector<ActivationTrace> before;
  std::optional<ToyProcessSpec> toy;  // set in toy mode
  std::string missing;                // non-empty: every cell at this layer is skipped
};

SteeringVector relayer(const SteeringVector& v, int layer) {
  return SteeringVector(layer, std::vector<double>(v.direction().begin(), v.direction().end()), v.delta_mu(),
                        v.bias_rescaled(), v.boundary(), v.stats(), v.trait(), v.source(), v.meta());
}

std::filesystem::path resolve(const SweepConfig& c, const std::filesystem::path& p) {
  return p.is_absolute() || c.base_dir.empty() ? p : c.base_dir / p;
}

std::map<int, LayerInputs> prepare_layers(const SweepConfig& config) {
  std::map<int, LayerInputs> out;
  if (config.toy) {
    SyntheticSpec syn = config.synthetic;
    syn.d_model = config.toy->d_model;
    syn.planted_direction = config.toy->direction;
    const auto pairs = generate_pairs(syn);
    ExtractionConfig ec;
    ec.seed = config.seed;
    const auto base = extract_steering_vector(pairs, ec, config.trait, 0);
    for (int layer : config.layers) {
      LayerInputs in;
      ToyProcessSpec spec = *config.toy;
      spec.layer = layer;
      spec.drift = config.toy->drift + config.drift_per_layer * static_cast<double>(layer);
      in.vector = relayer(base, layer);
      in.before = run_toy_process(spec, Condition::Malicious, std::nullopt);
      in.toy = spec;
      out.emplace(layer, std::move(in));
    }
    return out;
  }
  for (int layer : config.layers) {
    LayerInputs in;
    try {
      const auto vf = config.vector_files.find(layer);
      if (vf == config.vector_files.end())
        throw Error(ErrorCode::MissingInput, "no steering vector configured for layer " + std::to_string(layer));
      in.vector = io::read_steering_vector(resolve(config, vf->second));
      const auto tf = config.trace_files.find(layer);
      if (tf == config.trace_files.end() || tf->second.empty())
        throw Error(ErrorCode::MissingInput, "no traces configured for layer " + std::to_string(layer));
      for (const auto& p : tf->second) in.before.push_back(io::read_trace(resolve(config, p)));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::MissingInput) throw;
      in.missing = e.what();
    }
    out.emplace(layer, std::move(in));
  }
  return out;
}

std::vector<TurnMetrics> turn_metrics(std::span<const TurnText> texts) {
  std::vector<TurnMetrics> out;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const std::span<const TurnText> history = texts.subspan(0, i);
    TurnMetrics m;
    m.turn_index = texts[i].turn_index;
    m.sentence_reuse = sentence_reuse_rate(texts[i], history);
    m.cross_turn_repetition = cross_turn_repetition(texts[i], history);
    m.within_turn_repetition = within_turn_repetition(texts[i]);
    m.token_count = token_count(texts[i]);
    out.push_back(m);
  }
  return out;
}

SweepRow evaluate(SweepRecord cell, const SteeringVector& vector, std::span<const ActivationTrace> before,
                  std::span<const ActivationTrace> after, std::size_t seen, std::size_t steered,
                  const std::optional<ToyProcessSpec>& toy, std::size_t window) {
  SweepRow row;
  row.record = std::move(cell);
  row.n_tokens_seen = seen;
  row.n_tokens_steered = steered;
  row.steered_fraction = seen ? static_cast<double>(steered) / static_cast<double>(seen) : 0.0;
  std::vector<double> td, l2, response_counts, ce;
  bool have_logprobs = true;
  for (std::size_t i = 0; i < after.size(); ++i) {
    const auto d = target_distance(after[i], vector, window);
    td.insert(td.end(), d.begin(), d.end());
    const auto l = l2_divergence(before[i], after[i], window);
    l2.insert(l2.end(), l.begin(), l.end());
    response_counts.push_back(static_cast<double>(token_count(after[i])));
    const auto lp = after[i].response_logprobs();
    if (lp.empty()) {
      have_logprobs = false;
    } else {
      ce.push_back(cross_entropy(lp, window));
    }
  }
  row.target_distance = mean_of(td);
  row.l2_divergence = mean_of(l2);
  if (have_logprobs && !ce.empty()) row.cross_entropy = mean_of(ce);
  row.token_count = mean_of(response_counts);
  if (!after.empty()) row.trajectory = target_distance(after.front(), vector, std::nullopt);
  if (toy) row.turns = turn_metrics(toy_turn_texts(after, toy->sentence_tokens));
  return row;
}

SweepRow run_cell(const SweepRecord& cell, const LayerInputs& in, std::size_t window) {
  const SteeringConfig sc{cell.method, *cell.coefficient, *cell.position, *in.vector};
  std::vector<ActivationTrace> after;
  std::size_t seen = 0, steered = 0;
  for (const auto& t : in.before) {
    auto [out, report] = steer_stream(t, sc);
    seen += report.n_tokens_seen;
    steered += report.n_tokens_steered;
    after.push_back(std::move(out));
  }
  // Counts from offline steering of the unsteered run.
  if (in.toy) after = run_toy_process(*in.toy, Condition::Malicious, sc);
  return evaluate(cell, *in.vector, in.before, after, seen, steered, in.toy, window);
}

}  // namespace

OperatingPoint select_operating_point(std::span<const SweepRecord> records, double aligned_coherence,
                                      std::optional<Method> method_filter) {
  if (!std::isfinite(aligned_coherence) || aligned_coherence < 0.0 || aligned_coherence > 100.0)
    throw Error(ErrorCode::InvalidArgument, "aligned coherence must lie in [0, 100]");
  if (method_filter && is_baseline(*method_filter))
    throw Error(ErrorCode::InvalidArgument, "method filter must be a steering method");
  const SweepRecord* best = nullptr;
  bool any = false;
  for (const auto& r : records) {
    validate(r);
    if (is_baseline(r.method)) continue;
    any = true;
    if (method_filter && r.method != *method_filter) continue;
    if (!feasible(r, aligned_coherence)) continue;
    if (!best || ranks_ahead(r, *best)) best = &r;
  }
  if (!any) throw Error(ErrorCode::EmptyInput, "no steering records");
  if (!best)
    throw Error(ErrorCode::NoFeasiblePoint, "no record reaches 90% of aligned coherence " + fmt(aligned_coherence));
  return OperatingPoint{best->method,   *best->layer,     *best->coefficient,
                        *best->position, *best->trait_mean, *best->coherence_mean};
}

json to_json(const OperatingPoint& p) {
  return {{"method", std::string(to_string(p.method))},
          {"layer", p.layer},
          {"coefficient", p.coefficient},
          {"position", std::string(to_string(p.position))},
          {"trait_mean", p.trait_mean},
          {"coherence_mean", p.coherence_mean}};
}

std::vector<SweepRecord> merge_judge_scores(std::span<const SweepRecord> records,
                                            std::span<const SweepRecord> scores) {
  std::map<std::string, const SweepRecord*> by_key;
  for (const auto& s : scores) {
    if (!by_key.emplace(cell_key(s), &s).second)
      throw Error(ErrorCode::InvalidArgument, "duplicate judge score for " + cell_key(s));
  }
  std::vector<SweepRecord> out(records.begin(), records.end());
  for (auto& r : out) {
    const auto it = by_key.find(cell_key(r));
    if (it == by_key.end()) continue;
    r.trait_mean = it->second->trait_mean;
    r.trait_ci = it->second->trait_ci;
    r.coherence_mean = it->second->coherence_mean;
    r.coherence_ci = it->second->coherence_ci;
    validate(r);
  }
  return out;
}

std::vector<double> default_coefficients(Method m) {
  switch (m) {
    case Method::SwFC: return {1.0, 2.0, 3.0, 4.0, 5.0};
    case Method::StTP: return {0.0, 6.0, 12.0, 18.0, 24.0};
    case Method::StMP: return {1.0, 1.5, 2.0, 2.5, 3.0};
    default: return {};
  }
}

std::vector<double> SweepConfig::coefficients_for(Method m) const {
  const auto it = coefficients.find(m);
  return it == coefficients.end() ? default_coefficients(m) : it->second;
}

void SweepConfig::validate() const {
  if (methods.empty() || positions.empty() || layers.empty())
    throw Error(ErrorCode::InvalidArgument, "sweep needs methods, positions and layers");
  for (auto m : methods)
    if (is_baseline(m)) throw Error(ErrorCode::InvalidArgument, "baselines are enabled with \"baselines\": true");
  if (std::set<Method>(methods.begin(), methods.end()).size() != methods.size() ||
      std::set<Position>(positions.begin(), positions.end()).size() != positions.size() ||
      std::set<int>(layers.begin(), layers.end()).size() != layers.size())
    throw Error(ErrorCode::InvalidArgument, "duplicate sweep grid entries");
  for (int l : layers)
    if (l < 0) throw Error(ErrorCode::InvalidArgument, "negative layer");
  for (auto m : methods) {
    const auto cs = coefficients_for(m);
    if (cs.empty()) throw Error(ErrorCode::InvalidArgument, "empty coefficient grid");
    for (double c : cs) {
      if (!std::isfinite(c)) throw Error(ErrorCode::NonfiniteValue, "coefficient");
      if (m == Method::StMP && c < 0.0) throw Error(ErrorCode::InvalidArgument, "STMP coefficient must be >= 0");
    }
  }
  if (workers == 0) throw Error(ErrorCode::InvalidArgument, "workers must be >= 1");
  if (window == 0) throw Error(ErrorCode::InvalidArgument, "window must be >= 1");
  const bool files = !vector_files.empty() || !trace_files.empty();
  if (toy.has_value() == files)
    throw Error(ErrorCode::InvalidArgument, "sweep config needs exactly one of \"toy\" or \"inputs\"");
  if (toy) toy->validate();
}

SweepConfig sweep_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw Error(ErrorCode::SchemaMismatch, "sweep config must be a JSON object");
  SweepConfig c;
  c.base_dir = base_dir;
  c.trait = get_or(j, "trait", c.trait);
  try {
    if (j.contains("methods")) {
      c.methods.clear();
      for (const auto& m : j.at("methods")) c.methods.push_back(parse_method(m.get<std::string>()));
    }
    if (j.contains("positions")) {
      c.positions.clear();
      for (const auto& p : j.at("positions")) c.positions.push_back(parse_position(p.get<std::string>()));
    } else if (j.contains("position")) {
      c.positions = {parse_position(j.at("position").get<std::string>())};
    }
    if (j.contains("coefficients")) {
      for (const auto& [name, grid] : j.at("coefficients").items())
        c.coefficients[parse_method(name)] = grid.get<std::vector<double>>();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, e.what());
  }
  c.layers = get_or(j, "layers", c.layers);
  c.workers = get_or(j, "workers", c.workers);
  c.seed = get_or(j, "seed", c.seed);
  c.window = get_or(j, "window", c.window);
  c.baselines = get_or(j, "baselines", c.baselines);
  if (j.contains("inputs")) {
    const auto& in = j.at("inputs");
    if (in.contains("vectors"))
      for (const auto& [k, v] : in.at("vectors").items())
        c.vector_files[parse_layer_key(k)] = v.get<std::string>();
    if (in.contains("traces"))
      for (const auto& [k, v] : in.at("traces").items())
        for (const auto& p : v) c.trace_files[parse_layer_key(k)].emplace_back(p.get<std::string>());
  }
  if (j.contains("toy")) {
    json toy = j.at("toy");
    if (!toy.contains("seed")) toy["seed"] = c.seed;
    c.drift_per_layer = get_or(toy, "drift_per_layer", 0.0);
    json syn = toy.contains("synthetic") ? toy.at("synthetic") : json::object();
    if (!syn.contains("seed")) syn["seed"] = c.seed;
    toy.erase("drift_per_layer");
    toy.erase("synthetic");
    c.toy = toy_spec_from_json(toy);
    syn["d_model"] = c.toy->d_model;
    syn["planted_direction"] = c.toy->direction;
    c.synthetic = synthetic_spec_from_json(syn);
  }
  c.validate();
  return c;
}

SweepReport run_sweep(const SweepConfig& config) {
  config.validate();
  const auto layers = prepare_layers(config);

  std::vector<SweepRecord> cells;
  for (auto m : config.methods)
    for (auto p : config.positions)
      for (int l : config.layers)
        for (double c : config.coefficients_for(m)) {
          SweepRecord r;
          r.method = m;
          r.layer = l;
          r.coefficient = c;
          r.position = p;
          cells.push_back(r);
        }

  SweepReport report;
  if (config.baselines) {
    const auto& first = layers.at(config.layers.front());
    for (auto cond : {Condition::Aligned, Condition::Malicious}) {
      SweepRecord r;
      r.method = cond == Condition::Aligned ? Method::AlignedBaseline : Method::MaliciousBaseline;
      if (!first.missing.empty() || (!first.toy && cond == Condition::Aligned)) {
        report.skipped.push_back({r, first.missing.empty() ? "no aligned traces for file inputs" : first.missing});
        continue;
      }
      const auto traces = first.toy ? run_toy_process(*first.toy, cond, std::nullopt) : first.before;
      report.rows.push_back(evaluate(r, *first.vector, traces, traces, 0, 0, first.toy, config.window));
    }
  }

  std::vector<std::optional<SweepRow>> results(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const auto& in = layers.at(*cells[i].layer);
      if (!in.missing.empty()) continue;
      try {
        results[i] = run_cell(cells[i], in, config.window);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_workers = std::min(config.workers, std::max<std::size_t>(1, cells.size()));
  if (n_workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (results[i]) {
      report.rows.push_back(std::move(*results[i]));
    } else {
      report.skipped.push_back({cells[i], layers.at(*cells[i].layer).missing});
    }
  }
  return report;
}

json to_json(const SweepRow& row) {
  json j = io::to_json(row.record);
  json turns = json::array();
  for (const auto& t : row.turns) {
    turns.push_back({{"turn_index", t.turn_index},
                     {"sentence_reuse", t.sentence_reuse},
                     {"cross_turn_repetition", t.cross_turn_repetition},
                     {"within_turn_repetition", t.within_turn_repetition},
                     {"token_count", t.token_count}});
  }
  j["metrics"] = {{"n_tokens_seen", row.n_tokens_seen},
                  {"n_tokens_steered", row.n_tokens_steered},
                  {"steered_fraction", row.steered_fraction},
                  {"target_distance", row.target_distance},
                  {"l2_divergence", row.l2_divergence},
                  {"cross_entropy", row.cross_entropy ? json(*row.cross_entropy) : json(nullptr)},
                  {"token_count", row.token_count}};
  j["trajectory"] = row.trajectory;
  j["turns"] = turns;
  return j;
}

SweepRow sweep_row_from_json(const json& j) {
  SweepRow row;
  row.record = io::sweep_record_from_json(j);
  try {
    if (j.contains("metrics")) {
      const auto& m = j.at("metrics");
      row.n_tokens_seen = get_or<std::size_t>(m, "n_tokens_seen", 0);
      row.n_tokens_steered = get_or<std::size_t>(m, "n_tokens_steered", 0);
      row.steered_fraction = get_or(m, "steered_fraction", 0.0);
      row.target_distance = get_or(m, "target_distance", 0.0);
      row.l2_divergence = get_or(m, "l2_divergence", 0.0);
      if (m.contains("cross_entropy") && !m.at("cross_entropy").is_null())
        row.cross_entropy = m.at("cross_entropy").get<double>();
      row.token_count = get_or(m, "token_count", 0.0);
    }
    row.trajectory = get_or(j, "trajectory", row.trajectory);
    if (j.contains("turns")) {
      for (const auto& t : j.at("turns")) {
        TurnMetrics tm;
        tm.turn_index = t.at("turn_index").get<int>();
        tm.sentence_reuse = t.at("sentence_reuse").get<double>();
        tm.cross_turn_repetition = t.at("cross_turn_repetition").get<double>();
        tm.within_turn_repetition = t.at("within_turn_repetition").get<double>();
        tm.token_count = t.at("token_count").get<std::size_t>();
        row.turns.push_back(tm);
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, e.what());
  }
  return row;
}

std::vector<PlotFile> plot_manifest() {
  const std::vector<std::string> cell{"method", "position", "layer", "coefficient"};
  auto with = [&](std::vector<std::string> extra) {
    auto cols = cell;
    cols.insert(cols.end(), extra.begin(), extra.end());
    return cols;
  };
  return {
      {"layer_sweep.csv",
       with({"n_tokens_seen", "n_tokens_steered", "steered_fraction", "target_distance", "l2_divergence",
             "cross_entropy", "token_count"}),
       "One line per sweep row: judge-independent metrics by layer and coefficient."},
      {"coefficient_bars.csv", with({"trait_mean", "trait_ci", "coherence_mean", "coherence_ci"}),
       "One line per sweep row: judge scores (empty until merged)."},
      {"trajectories.csv", with({"token", "target_distance", "moving_average"}),
       "Per-token target distance of the first trace, with a trailing 8-token moving average."},
      {"multi_turn.csv",
       with({"turn_index", "sentence_reuse", "cross_turn_repetition", "within_turn_repetition", "token_count"}),
       "Per-turn repetition metrics."},
  };
}

void emit_plot_data(std::span<const SweepRow> rows, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
  const auto manifest = plot_manifest();
  std::map<std::string, std::string> files;
  for (const auto& f : manifest) {
    std::string header;
    for (std::size_t i = 0; i < f.columns.size(); ++i) header += (i ? "," : "") + f.columns[i];
    files[f.name] = header + "\n";
  }
  for (const auto& row : rows) {
    const auto prefix = cell_prefix(row.record);
    const auto& r = row.record;
    files["layer_sweep.csv"] += prefix + ',' + std::to_string(row.n_tokens_seen) + ',' +
                                std::to_string(row.n_tokens_steered) + ',' + fmt(row.steered_fraction) + ',' +
                                fmt(row.target_distance) + ',' + fmt(row.l2_divergence) + ',' +
                                fmt(row.cross_entropy) + ',' + fmt(row.token_count) + '\n';
    files["coefficient_bars.csv"] += prefix + ',' + fmt(r.trait_mean) + ',' + fmt(r.trait_ci) + ',' +
                                     fmt(r.coherence_mean) + ',' + fmt(r.coherence_ci) + '\n';
    const auto smooth = row.trajectory.empty() ? std::vector<double>{}
                                               : moving_average(row.trajectory, kTrajectorySmoothing);
    for (std::size_t t = 0; t < row.trajectory.size(); ++t)
      files["trajectories.csv"] += prefix + ',' + std::to_string(t) + ',' + fmt(row.trajectory[t]) + ',' +
                                   fmt(smooth[t]) + '\n';
    for (const auto& t : row.turns)
      files["multi_turn.csv"] += prefix + ',' + std::to_string(t.turn_index) + ',' + fmt(t.sentence_reuse) + ',' +
                                 fmt(t.cross_turn_repetition) + ',' + fmt(t.within_turn_repetition) + ',' +
                                 std::to_string(t.token_count) + '\n';
  }
  for (const auto& [name, text] : files) io::write_text(text, dir / name);
  json m = json::array();
  for (const auto& f : manifest) m.push_back({{"file", f.name}, {"columns", f.columns}, {"description", f.description}});
  io::write_text(json{{"files", m}}.dump(2) + "\n", dir / "manifest.json");
}

}  // namespace tokensteer
