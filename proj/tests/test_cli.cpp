#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sstream>

#include "oracles.hpp"
#include "tokensteer/cli.hpp"
#include "tokensteer/io.hpp"

using namespace tokensteer;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "tokensteer");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string s(const fs::path& p) { return p.string(); }

}  // namespace

TEST_CASE("usage errors") {
  CHECK(run({}).code == kExitValidation);
  CHECK(run({"bogus"}).code == kExitValidation);
  CHECK(run({"--help"}).code == kExitOk);
  CHECK(run({"extract", "-i", "x"}).code == kExitValidation);
}

TEST_CASE("pipeline: simulate, extract, steer, metrics") {
  const auto dir = oracle::temp_dir("cli_pipeline");
  io::write_text(R"({"d_model": 8, "n_per_class": 40})", dir / "pairs.json");
  io::write_text(R"({"d_model": 8, "n_turns": 2, "tokens_per_turn": 12, "drift": -0.3})", dir / "toy.json");

  REQUIRE(run({"simulate", "--kind", "pairs", "--config", s(dir / "pairs.json"), "-o", s(dir / "pairs.jsonl")}).code ==
          0);
  REQUIRE(run({"extract", "-i", s(dir / "pairs.jsonl"), "-o", s(dir / "v.json"), "--layer", "0"}).code == 0);
  const auto v = io::read_steering_vector(dir / "v.json");
  CHECK(v.d_model() == 8);

  REQUIRE(run({"simulate", "--kind", "toy", "--config", s(dir / "toy.json"), "-o", s(dir / "toy")}).code == 0);
  CHECK(fs::exists(dir / "toy" / "turn_000.actm"));
  CHECK(fs::exists(dir / "toy" / "turns.jsonl"));

  const auto r = run({"steer", "-i", s(dir / "toy" / "turn_001.actm"), "-o", s(dir / "steered.actm"), "--vector",
                      s(dir / "v.json"), "--method", "STTP", "--alpha", "6", "--report", s(dir / "rep.jsonl")});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("steered") != std::string::npos);
  const auto steered = io::read_trace(dir / "steered.actm");
  CHECK(steered.meta().at("steering_method") == "STTP");

  const auto m = run({"metrics", "-i", s(dir / "steered.actm"), "--reference", s(dir / "toy" / "turn_001.actm"),
                      "--vector", s(dir / "v.json"), "--turns", s(dir / "toy" / "turns.jsonl"), "-o",
                      s(dir / "metrics.json")});
  REQUIRE(m.code == 0);
  const auto j = nlohmann::json::parse(io::read_text(dir / "metrics.json"));
  CHECK(j.at("window") == 50);
  CHECK(j.at("reports").size() > 0);
}

TEST_CASE("exit codes for bad and missing inputs") {
  const auto dir = oracle::temp_dir("cli_codes");
  auto missing = run({"extract", "-i", s(dir / "nope.jsonl"), "-o", s(dir / "v.json"), "--layer", "0"});
  CHECK(missing.code == kExitMissingInput);
  CHECK(missing.err.find("MISSING_INPUT") != std::string::npos);

  io::write_text("{\"scenario_id\": 1}\n", dir / "bad.jsonl");
  CHECK(run({"extract", "-i", s(dir / "bad.jsonl"), "-o", s(dir / "v.json"), "--layer", "0"}).code ==
        kExitValidation);

  io::write_text(R"({"d_model": 4, "n_per_class": 10})", dir / "p.json");
  REQUIRE(run({"simulate", "--config", s(dir / "p.json"), "-o", s(dir / "p.jsonl")}).code == 0);
  REQUIRE(run({"extract", "-i", s(dir / "p.jsonl"), "-o", s(dir / "v.json"), "--layer", "0"}).code == 0);
  io::write_text(R"({"d_model": 4, "n_turns": 1, "tokens_per_turn": 5})", dir / "t.json");
  REQUIRE(run({"simulate", "--kind", "toy", "--config", s(dir / "t.json"), "-o", s(dir / "toy")}).code == 0);
  CHECK(run({"steer", "-i", s(dir / "toy" / "turn_000.actm"), "-o", s(dir / "o.actm"), "--vector",
             s(dir / "v.json"), "--method", "NOPE"})
            .code == kExitValidation);
  CHECK(run({"steer", "-i", s(dir / "missing.actm"), "-o", s(dir / "o.actm"), "--vector", s(dir / "v.json")}).code ==
        kExitMissingInput);
}

TEST_CASE("seeded commands are reproducible") {
  const auto dir = oracle::temp_dir("cli_seed");
  io::write_text(R"({"d_model": 5, "n_per_class": 12})", dir / "p.json");
  for (const char* name : {"a.jsonl", "b.jsonl"})
    REQUIRE(run({"simulate", "--config", s(dir / "p.json"), "--seed", "9", "-o", s(dir / name)}).code == 0);
  CHECK(io::read_text(dir / "a.jsonl") == io::read_text(dir / "b.jsonl"));
  REQUIRE(run({"simulate", "--config", s(dir / "p.json"), "--seed", "10", "-o", s(dir / "c.jsonl")}).code == 0);
  CHECK(io::read_text(dir / "a.jsonl") != io::read_text(dir / "c.jsonl"));

  io::write_text(R"({"player_a": "x", "player_b": "y", "winner": "A", "prompt_id": "1"}
{"player_a": "x", "player_b": "y", "winner": "B", "prompt_id": "2"}
{"player_a": "y", "player_b": "z", "winner": "A", "prompt_id": "3"}
{"player_a": "z", "player_b": "x", "winner": "B", "prompt_id": "4"}
{"player_a": "z", "player_b": "y", "winner": "A", "prompt_id": "5"}
)",
                 dir / "m.jsonl");
  for (const char* name : {"e1.json", "e2.json"})
    REQUIRE(run({"elo", "-i", s(dir / "m.jsonl"), "-o", s(dir / name), "--samples", "100", "--workers", "2"}).code ==
            0);
  CHECK(io::read_text(dir / "e1.json") == io::read_text(dir / "e2.json"));
}

TEST_CASE("sweep, select-op and emit-plots") {
  const auto dir = oracle::temp_dir("cli_sweep");
  io::write_text(R"({"methods": ["SWFC"], "layers": [0, 1], "coefficients": {"SWFC": [1, 2]},
                     "toy": {"d_model": 6, "n_turns": 2, "tokens_per_turn": 10, "synthetic": {"n_per_class": 30}}})",
                 dir / "sweep.json");
  REQUIRE(run({"sweep", "--config", s(dir / "sweep.json"), "-o", s(dir / "a.jsonl")}).code == 0);
  REQUIRE(run({"sweep", "--config", s(dir / "sweep.json"), "-o", s(dir / "b.jsonl"), "--workers", "2"}).code == 0);
  CHECK(io::read_text(dir / "a.jsonl") == io::read_text(dir / "b.jsonl"));
  CHECK(io::read_jsonl(dir / "a.jsonl").size() == 4);

  REQUIRE(run({"emit-plots", "-i", s(dir / "a.jsonl"), "-o", s(dir / "plots")}).code == 0);
  CHECK(fs::exists(dir / "plots" / "manifest.json"));

  io::write_text(
      R"({"method": "SWFC", "layer": 1, "coefficient": 2, "position": "ALL", "trait_mean": 70, "coherence_mean": 90}
{"method": "SWFC", "layer": 0, "coefficient": 1, "position": "ALL", "trait_mean": 60, "coherence_mean": 95}
)",
      dir / "scores.jsonl");
  REQUIRE(run({"select-op", "-i", s(dir / "a.jsonl"), "--scores", s(dir / "scores.jsonl"), "--aligned-coherence",
               "96", "-o", s(dir / "op.json")})
              .code == 0);
  const auto op = nlohmann::json::parse(io::read_text(dir / "op.json"));
  CHECK(op.at("layer") == 1);
  CHECK(run({"select-op", "-i", s(dir / "a.jsonl"), "--scores", s(dir / "scores.jsonl"), "--aligned-coherence",
             "200"})
            .code == kExitValidation);
}
