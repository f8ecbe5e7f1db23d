#include "tokensteer/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tokensteer/elo.hpp"
#include "tokensteer/error.hpp"
#include "tokensteer/extraction.hpp"
#include "tokensteer/io.hpp"
#include "tokensteer/metrics.hpp"
#include "tokensteer/simulator.hpp"
#include "tokensteer/steering.hpp"
#include "tokensteer/sweep.hpp"

namespace tokensteer {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void write_json(const json& j, const fs::path& path) { io::write_text(j.dump(2) + "\n", path); }

json read_json(const fs::path& path) {
  const auto text = io::read_text(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, path.string() + ": " + e.what());
  }
}

json to_json(const MetricReport& r) {
  return {{"name", r.name}, {"per_item", r.per_item}, {"mean", r.mean}, {"ci95", r.ci95}};
}

std::string format_alpha(double a) {
  std::ostringstream s;
  s.precision(17);
  s << a;
  return s.str();
}

struct SteerFlags {
  std::string vector;
  std::string method = "SWFC";
  double alpha = 0.0;
  std::string position = "ALL";

  SteeringConfig config() const {
    return SteeringConfig{parse_method(method), alpha, parse_position(position), io::read_steering_vector(vector)};
  }
};

void add_steer_flags(CLI::App* app, SteerFlags& f, bool vector_required) {
  auto* v = app->add_option("--vector", f.vector, "steering-vector JSON");
  if (vector_required) v->required();
  app->add_option("--method", f.method, "SWFC, STTP or STMP")->capture_default_str();
  app->add_option("--alpha", f.alpha, "steering coefficient")->capture_default_str();
  app->add_option("--position", f.position, "ALL or RESPONSE")->capture_default_str();
}

// --- simulate -------------------------------------------------------------

struct SimulateOpts {
  std::string kind = "pairs";
  std::string config;
  std::string output;
  std::optional<std::uint64_t> seed;
  std::string condition = "MALICIOUS";
  std::optional<int> layer;
  SteerFlags steer;
};

int do_simulate(const SimulateOpts& o, std::ostream& out) {
  json spec = o.config.empty() ? json::object() : read_json(o.config);
  if (o.seed) spec["seed"] = *o.seed;
  if (o.kind == "pairs") {
    const auto s = synthetic_spec_from_json(spec);
    const auto pairs = generate_pairs(s);
    io::write_pairs(pairs, o.output);
    out << "wrote " << pairs.size() << " pairs to " << o.output << "\n";
    return kExitOk;
  }
  if (o.kind != "toy") throw Error(ErrorCode::InvalidArgument, "--kind must be pairs or toy");
  if (o.layer) spec["layer"] = *o.layer;
  const auto s = toy_spec_from_json(spec);
  std::optional<SteeringConfig> steering;
  if (!o.steer.vector.empty()) steering = o.steer.config();
  const auto turns = run_toy_process(s, parse_condition(o.condition), steering);
  std::error_code ec;
  fs::create_directories(o.output, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + o.output + ": " + ec.message());
  for (std::size_t i = 0; i < turns.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "turn_%03zu.actm", i);
    io::write_trace(turns[i], fs::path(o.output) / name);
  }
  io::write_turns(toy_turn_texts(turns, s.sentence_tokens), fs::path(o.output) / "turns.jsonl");
  out << "wrote " << turns.size() << " turns to " << o.output << "\n";
  return kExitOk;
}

// --- extract --------------------------------------------------------------

struct ExtractOpts {
  std::string input;
  std::string output;
  int layer = 0;
  std::string trait = "trait";
  std::string source = "LOGREG";
  std::string config;
  std::optional<std::uint64_t> seed;
};

int do_extract(const ExtractOpts& o, std::ostream& out) {
  ExtractionConfig ec;
  if (!o.config.empty()) {
    const auto j = read_json(o.config);
    try {
      ec.regularization_c = j.value("regularization_c", ec.regularization_c);
      ec.max_iterations = j.value("max_iterations", ec.max_iterations);
      ec.gradient_tolerance = j.value("gradient_tolerance", ec.gradient_tolerance);
      ec.seed = j.value("seed", ec.seed);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::SchemaMismatch, e.what());
    }
  }
  if (o.seed) ec.seed = *o.seed;
  ec.validate();
  const auto pairs = io::read_pairs(o.input);
  const auto source = parse_source(o.source);
  const auto v = source == VectorSource::LogReg ? extract_steering_vector(pairs, ec, o.trait, o.layer)
                                                : build_caa_steering_vector(pairs, o.trait, o.layer);
  io::write_steering_vector(v, o.output);
  out << "layer " << v.layer() << " boundary " << v.boundary() << " cohen_d " << v.stats().cohen_d << "\n";
  return kExitOk;
}

// --- steer ----------------------------------------------------------------

struct SteerOpts {
  std::string input;
  std::string output;
  std::string report;
  std::optional<int> layer;
  SteerFlags steer;
};

int do_steer(const SteerOpts& o, std::ostream& out) {
  const auto config = o.steer.config();
  if (o.layer && *o.layer != config.vector.layer())
    throw Error(ErrorCode::LayerMismatch, "--layer does not match the steering vector layer");
  const auto trace = io::read_trace(o.input);
  auto [steered, report] = steer_stream(trace, config);
  Meta meta = steered.meta();
  meta["steering_method"] = std::string(to_string(config.method));
  meta["steering_alpha"] = format_alpha(config.coefficient);
  meta["steering_position"] = std::string(to_string(config.position));
  io::write_trace(steered.with_meta(std::move(meta)), o.output);
  if (!o.report.empty()) write_steering_report(report, o.report);
  out << "steered " << report.n_tokens_steered << " of " << report.n_tokens_seen << " tokens\n";
  return kExitOk;
}

// --- metrics --------------------------------------------------------------

struct MetricsOpts {
  std::vector<std::string> inputs;
  std::vector<std::string> references;
  std::string vector;
  std::string turns;
  std::string reference_turns;
  std::string output;
  std::size_t window = kDefaultWindow;
  std::size_t samples = 1000;
  std::uint64_t seed = 42;
};

json turn_metrics_json(const std::vector<TurnText>& turns, const std::vector<TurnText>* reference) {
  validate_conversation(turns);
  if (reference && reference->size() != turns.size())
    throw Error(ErrorCode::ShapeMismatch, "reference conversation has a different number of turns");
  json rows = json::array();
  for (std::size_t i = 0; i < turns.size(); ++i) {
    const std::span<const TurnText> history(turns.data(), i);
    json row{{"turn_index", turns[i].turn_index},
             {"cross_turn_repetition", cross_turn_repetition(turns[i], history)},
             {"within_turn_repetition", within_turn_repetition(turns[i])},
             {"token_count", token_count(turns[i])}};
    try {
      row["sentence_reuse"] = sentence_reuse_rate(turns[i], history);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::MissingEmbedding) throw;
      row["sentence_reuse"] = nullptr;
    }
    if (reference) row["sentence_f1"] = sentence_f1_similarity(turns[i], (*reference)[i]);
    rows.push_back(std::move(row));
  }
  return rows;
}

int do_metrics(const MetricsOpts& o, std::ostream& out) {
  if (o.inputs.empty() && o.turns.empty())
    throw Error(ErrorCode::InvalidArgument, "metrics needs --input traces or --turns");
  if (!o.references.empty() && o.references.size() != o.inputs.size())
    throw Error(ErrorCode::InvalidArgument, "--reference count must match --input count");
  json result{{"window", o.window},
              {"window_origin", "response"},
              {"tokenization", "whitespace, lowercase, strip edge punctuation"},
              {"bootstrap", {{"samples", o.samples}, {"seed", o.seed}}}};
  json reports = json::array();
  if (!o.inputs.empty()) {
    std::vector<ActivationTrace> traces, refs;
    for (const auto& p : o.inputs) traces.push_back(io::read_trace(p));
    for (const auto& p : o.references) refs.push_back(io::read_trace(p));
    std::vector<double> td, l2, ce, counts;
    bool all_logprobs = true;
    std::optional<SteeringVector> vec;
    if (!o.vector.empty()) vec = io::read_steering_vector(o.vector);
    for (std::size_t i = 0; i < traces.size(); ++i) {
      if (vec) {
        const auto d = target_distance(traces[i], *vec, o.window);
        td.insert(td.end(), d.begin(), d.end());
      }
      if (!refs.empty()) {
        const auto d = l2_divergence(refs[i], traces[i], o.window);
        l2.insert(l2.end(), d.begin(), d.end());
      }
      const auto lp = traces[i].response_logprobs();
      if (lp.empty()) {
        all_logprobs = false;
      } else {
        ce.push_back(cross_entropy(lp, o.window));
      }
      counts.push_back(static_cast<double>(token_count(traces[i])));
    }
    if (vec) reports.push_back(to_json(make_report("target_distance", td, o.samples, o.seed)));
    if (!refs.empty()) reports.push_back(to_json(make_report("l2_divergence", l2, o.samples, o.seed)));
    if (all_logprobs) reports.push_back(to_json(make_report("cross_entropy", ce, o.samples, o.seed)));
    reports.push_back(to_json(make_report("token_count", counts, o.samples, o.seed)));
  }
  result["reports"] = reports;
  if (!o.turns.empty()) {
    const auto turns = io::read_turns(o.turns);
    std::optional<std::vector<TurnText>> ref;
    if (!o.reference_turns.empty()) ref = io::read_turns(o.reference_turns);
    result["turns"] = turn_metrics_json(turns, ref ? &*ref : nullptr);
  }
  write_json(result, o.output);
  out << "wrote metrics to " << o.output << "\n";
  return kExitOk;
}

// --- elo ------------------------------------------------------------------

struct EloOpts {
  std::string input;
  std::string output;
  std::string csv;
  std::vector<std::string> players;
  std::size_t samples = 1000;
  std::size_t workers = 1;
  std::uint64_t seed = 42;
  double anchor = 1500.0;
};

int do_elo(const EloOpts& o, std::ostream& out) {
  const auto matches = io::read_match_records(o.input);
  std::optional<std::vector<std::string>> players;
  if (!o.players.empty()) players = o.players;
  auto t = tournament_from_sweep(matches, players);
  t.bootstrap_samples = o.samples;
  t.seed = o.seed;
  t.anchor_rating = o.anchor;
  const auto table = bootstrap_ci(t, o.workers);
  json j = to_json(table);
  j["anchor_rating"] = t.anchor_rating;
  j["bootstrap_samples"] = t.bootstrap_samples;
  j["seed"] = t.seed;
  j["n_matches"] = t.matches.size();
  write_json(j, o.output);
  if (!o.csv.empty()) io::write_text(to_csv(table), o.csv);
  for (const auto& p : table.players) out << p.name << " " << p.rating << "\n";
  return kExitOk;
}

// --- select-op ------------------------------------------------------------

struct SelectOpts {
  std::string input;
  std::string scores;
  std::string output;
  std::optional<double> aligned_coherence;
  std::string method;
};

int do_select(const SelectOpts& o, std::ostream& out) {
  auto records = io::read_sweep_records(o.input);
  if (!o.scores.empty()) records = merge_judge_scores(records, io::read_sweep_records(o.scores));
  double aligned = 0.0;
  if (o.aligned_coherence) {
    aligned = *o.aligned_coherence;
  } else {
    const auto it = std::find_if(records.begin(), records.end(), [](const SweepRecord& r) {
      return r.method == Method::AlignedBaseline && r.coherence_mean.has_value();
    });
    if (it == records.end())
      throw Error(ErrorCode::InvalidArgument, "no --aligned-coherence and no scored ALIGNED_BASELINE row");
    aligned = *it->coherence_mean;
  }
  std::optional<Method> filter;
  if (!o.method.empty()) filter = parse_method(o.method);
  const auto op = select_operating_point(records, aligned, filter);
  json j = to_json(op);
  j["aligned_coherence"] = aligned;
  if (o.output.empty()) {
    out << j.dump(2) << "\n";
  } else {
    write_json(j, o.output);
    out << to_string(op.method) << " layer " << op.layer << " alpha " << op.coefficient << "\n";
  }
  return kExitOk;
}

// --- sweep / emit-plots ---------------------------------------------------

struct SweepOpts {
  std::string config;
  std::string output;
  std::optional<std::size_t> workers;
  std::optional<std::uint64_t> seed;
};

int do_sweep(const SweepOpts& o, std::ostream& out, std::ostream& err) {
  json j = read_json(o.config);
  if (o.seed) {
    j["seed"] = *o.seed;
    if (j.contains("toy")) {
      j["toy"]["seed"] = *o.seed;
      if (j["toy"].contains("synthetic")) j["toy"]["synthetic"]["seed"] = *o.seed;
    }
  }
  if (o.workers) j["workers"] = *o.workers;
  const auto config = sweep_config_from_json(j, fs::path(o.config).parent_path());
  const auto report = run_sweep(config);
  std::vector<json> rows;
  for (const auto& r : report.rows) rows.push_back(to_json(r));
  io::write_jsonl(rows, o.output);
  for (const auto& s : report.skipped) err << "skipped " << io::to_json(s.cell).dump() << ": " << s.reason << "\n";
  out << "wrote " << rows.size() << " rows to " << o.output << "\n";
  return report.rows.empty() && !report.skipped.empty() ? kExitMissingInput : kExitOk;
}

struct PlotOpts {
  std::string input;
  std::string output;
};

int do_plots(const PlotOpts& o, std::ostream& out) {
  std::vector<SweepRow> rows;
  for (const auto& j : io::read_jsonl(o.input)) rows.push_back(sweep_row_from_json(j));
  emit_plot_data(rows, o.output);
  out << "wrote plot data for " << rows.size() << " rows to " << o.output << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"tokensteer: steering-vector extraction, per-token steering and evaluation"};
  app.require_subcommand(1);

  SimulateOpts sim;
  auto* c_sim = app.add_subcommand("simulate", "generate synthetic contrastive pairs or toy traces");
  c_sim->add_option("--kind", sim.kind, "pairs or toy")->capture_default_str();
  c_sim->add_option("--config", sim.config, "spec JSON");
  c_sim->add_option("--output,-o", sim.output, "pairs JSONL file or trace directory")->required();
  c_sim->add_option("--seed", sim.seed);
  c_sim->add_option("--condition", sim.condition, "ALIGNED or MALICIOUS (toy)")->capture_default_str();
  c_sim->add_option("--layer", sim.layer);
  add_steer_flags(c_sim, sim.steer, false);

  ExtractOpts ext;
  auto* c_ext = app.add_subcommand("extract", "fit a steering vector from contrastive pairs");
  c_ext->add_option("--input,-i", ext.input, "pairs JSONL")->required();
  c_ext->add_option("--output,-o", ext.output, "steering-vector JSON")->required();
  c_ext->add_option("--layer", ext.layer)->required();
  c_ext->add_option("--trait", ext.trait)->capture_default_str();
  c_ext->add_option("--source", ext.source, "LOGREG or CAA")->capture_default_str();
  c_ext->add_option("--config", ext.config, "extraction config JSON");
  c_ext->add_option("--seed", ext.seed);

  SteerOpts st;
  auto* c_st = app.add_subcommand("steer", "apply a steering transform to an ACTM trace");
  c_st->add_option("--input,-i", st.input, "ACTM trace")->required();
  c_st->add_option("--output,-o", st.output, "steered ACTM trace")->required();
  c_st->add_option("--report", st.report, "per-token JSONL report");
  c_st->add_option("--layer", st.layer);
  add_steer_flags(c_st, st.steer, true);

  MetricsOpts met;
  auto* c_met = app.add_subcommand("metrics", "judge-independent metrics");
  c_met->add_option("--input,-i", met.inputs, "ACTM traces");
  c_met->add_option("--reference", met.references, "unsteered ACTM traces, one per input");
  c_met->add_option("--vector", met.vector, "steering-vector JSON (target distance)");
  c_met->add_option("--turns", met.turns, "TurnText JSONL");
  c_met->add_option("--reference-turns", met.reference_turns, "reference TurnText JSONL (sentence F1)");
  c_met->add_option("--output,-o", met.output, "metrics JSON")->required();
  c_met->add_option("--window", met.window)->capture_default_str();
  c_met->add_option("--samples", met.samples, "bootstrap resamples")->capture_default_str();
  c_met->add_option("--seed", met.seed)->capture_default_str();

  EloOpts elo;
  auto* c_elo = app.add_subcommand("elo", "Bradley-Terry ratings with bootstrap intervals");
  c_elo->add_option("--input,-i", elo.input, "match JSONL")->required();
  c_elo->add_option("--output,-o", elo.output, "rating table JSON")->required();
  c_elo->add_option("--csv", elo.csv, "rating table CSV");
  c_elo->add_option("--players", elo.players, "player order")->delimiter(',');
  c_elo->add_option("--samples", elo.samples)->capture_default_str();
  c_elo->add_option("--workers", elo.workers)->capture_default_str();
  c_elo->add_option("--seed", elo.seed)->capture_default_str();
  c_elo->add_option("--anchor", elo.anchor)->capture_default_str();

  SelectOpts sel;
  auto* c_sel = app.add_subcommand("select-op", "pick the best operating point");
  c_sel->add_option("--input,-i", sel.input, "sweep JSONL")->required();
  c_sel->add_option("--scores", sel.scores, "judge score JSONL");
  c_sel->add_option("--output,-o", sel.output, "operating point JSON");
  c_sel->add_option("--aligned-coherence", sel.aligned_coherence);
  c_sel->add_option("--method", sel.method, "restrict to one method");

  SweepOpts sw;
  auto* c_sw = app.add_subcommand("sweep", "run a layer/coefficient sweep");
  c_sw->add_option("--config", sw.config, "sweep config JSON")->required();
  c_sw->add_option("--output,-o", sw.output, "sweep JSONL")->required();
  c_sw->add_option("--workers", sw.workers);
  c_sw->add_option("--seed", sw.seed);

  PlotOpts pl;
  auto* c_pl = app.add_subcommand("emit-plots", "write plot CSVs from a sweep report");
  c_pl->add_option("--input,-i", pl.input, "sweep JSONL")->required();
  c_pl->add_option("--output,-o", pl.output, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (c_sim->parsed()) return do_simulate(sim, out);
    if (c_ext->parsed()) return do_extract(ext, out);
    if (c_st->parsed()) return do_steer(st, out);
    if (c_met->parsed()) return do_metrics(met, out);
    if (c_elo->parsed()) return do_elo(elo, out);
    if (c_sel->parsed()) return do_select(sel, out);
    if (c_sw->parsed()) return do_sweep(sw, out, err);
    if (c_pl->parsed()) return do_plots(pl, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::MissingInput ? kExitMissingInput : kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitValidation;
}

}  // namespace tokensteer
