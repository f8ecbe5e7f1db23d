#pragma once

// Layer/coefficient sweeps, judge-score merging and operating-point selection.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tokensteer/simulator.hpp"
#include "tokensteer/types.hpp"

namespace tokensteer {

inline constexpr double kCoherenceFloor = 0.9;

struct OperatingPoint {
  Method method = Method::SwFC;
  int layer = 0;
  double coefficient = 0.0;
  Position position = Position::All;
  double trait_mean = 0.0;
  double coherence_mean = 0.0;

  friend bool operator==(const OperatingPoint&, const OperatingPoint&) = default;
};

/// Highest trait_mean among non-baseline records with
/// coherence_mean >= 0.9 * aligned_coherence. Ties: higher coherence, lower
/// layer, lower |alpha|, ALL before RESPONSE, lower alpha, method order.
/// Throws NoFeasiblePoint.
OperatingPoint select_operating_point(std::span<const SweepRecord> records, double aligned_coherence,
                                      std::optional<Method> method_filter = std::nullopt);

nlohmann::json to_json(const OperatingPoint& p);

/// Copies judge scores onto records with the same (method, layer, coefficient,
/// position) key. Score rows without a matching record are ignored.
std::vector<SweepRecord> merge_judge_scores(std::span<const SweepRecord> records,
                                            std::span<const SweepRecord> scores);

/// Default coefficient grid per method.
std::vector<double> default_coefficients(Method m);

struct SweepConfig {
  std::string trait = "trait";
  std::vector<Method> methods{Method::SwFC, Method::StTP, Method::StMP};
  std::vector<Position> positions{Position::All};
  std::vector<int> layers{0};
  std::map<Method, std::vector<double>> coefficients;  // missing: defaults
  std::size_t workers = 1;
  std::uint64_t seed = 42;
  std::size_t window = 50;
  bool baselines = false;

  // File inputs (paths relative to `base_dir`): one steering vector and a
  // list of ACTM traces per layer.
  std::map<int, std::filesystem::path> vector_files;
  std::map<int, std::vector<std::filesystem::path>> trace_files;
  std::filesystem::path base_dir;

  // Toy inputs: per layer, the toy process with drift + drift_per_layer*layer,
  // steered by a vector extracted from synthetic pairs.
  std::optional<ToyProcessSpec> toy;
  double drift_per_layer = 0.0;
  SyntheticSpec synthetic;

  void validate() const;
  std::vector<double> coefficients_for(Method m) const;
};

/// Reads a config document. Relative input paths resolve against `base_dir`.
SweepConfig sweep_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

struct TurnMetrics {
  int turn_index = 0;
  double sentence_reuse = 0.0;
  double cross_turn_repetition = 0.0;
  double within_turn_repetition = 0.0;
  std::size_t token_count = 0;
};

struct SweepRow {
  SweepRecord record;
  std::size_t n_tokens_seen = 0;
  std::size_t n_tokens_steered = 0;
  double steered_fraction = 0.0;
  double target_distance = 0.0;
  double l2_divergence = 0.0;
  std::optional<double> cross_entropy;
  double token_count = 0.0;
  std::vector<double> trajectory;  // target distance per response token, first trace
  std::vector<TurnMetrics> turns;  // empty for file inputs without turn structure
};

struct SkippedCell {
  SweepRecord cell;
  std::string reason;
};

struct SweepReport {
  std::vector<SweepRow> rows;
  std::vector<SkippedCell> skipped;
};

/// One row per (method, position, layer, coefficient) cell, in that nesting
/// order, plus ALIGNED/MALICIOUS baselines first when enabled. Judge columns
/// stay empty. Cells whose inputs are missing are skipped and listed.
SweepReport run_sweep(const SweepConfig& config);

nlohmann::json to_json(const SweepRow& row);
SweepRow sweep_row_from_json(const nlohmann::json& j);

struct PlotFile {
  std::string name;
  std::vector<std::string> columns;
  std::string description;
};

/// Column layout of every file emit_plot_data writes.
std::vector<PlotFile> plot_manifest();

/// Writes layer_sweep.csv, coefficient_bars.csv, trajectories.csv,
/// multi_turn.csv and manifest.json into `dir` (created if needed).
void emit_plot_data(std::span<const SweepRow> rows, const std::filesystem::path& dir);

}  // namespace tokensteer
