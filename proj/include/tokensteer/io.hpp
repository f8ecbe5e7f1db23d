#pragma once

// On-disk formats.
//
// ACTM trace (all integers little-endian):
//   "ACTM" | u32 version=1 | u32 d_model | u32 layer | u32 n_tokens | u8 flags
//   | u32 meta_len | meta_len bytes UTF-8 JSON meta (0 bytes when meta empty)
//   | n_tokens*d_model f32 hidden (token-major) | n_tokens role bytes
//   | [flags bit0] n_tokens f32 logprobs
//
// Steering vectors are JSON documents; sweep rows, matches, contrastive pairs
// and turn texts are JSON-lines.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tokensteer/types.hpp"

namespace tokensteer {

struct TurnText;

namespace io {

inline constexpr char kTraceMagic[4] = {'A', 'C', 'T', 'M'};
inline constexpr std::uint32_t kTraceVersion = 1;
inline constexpr std::size_t kTraceHeaderBytes = 4 + 4 + 4 + 4 + 4 + 1 + 4;
inline constexpr int kSteeringVectorFormat = 1;

std::vector<std::uint8_t> encode_trace(const ActivationTrace& trace);
ActivationTrace decode_trace(std::span<const std::uint8_t> bytes);

ActivationTrace read_trace(const std::filesystem::path& path);
void write_trace(const ActivationTrace& trace, const std::filesystem::path& path);

nlohmann::json to_json(const SteeringVector& v);
SteeringVector steering_vector_from_json(const nlohmann::json& j);
SteeringVector read_steering_vector(const std::filesystem::path& path);
void write_steering_vector(const SteeringVector& v, const std::filesystem::path& path);

nlohmann::json to_json(const SweepRecord& r);
SweepRecord sweep_record_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MatchRecord& m);
MatchRecord match_record_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ContrastivePair& p);
ContrastivePair contrastive_pair_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TurnText& t);
TurnText turn_text_from_json(const nlohmann::json& j);

/// Reads a JSON-lines file; blank lines are skipped. Errors carry line numbers.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(std::span<const nlohmann::json> rows, const std::filesystem::path& path);

std::vector<SweepRecord> read_sweep_records(const std::filesystem::path& path);
void write_sweep_records(std::span<const SweepRecord> rows, const std::filesystem::path& path);
std::vector<MatchRecord> read_match_records(const std::filesystem::path& path);
void write_match_records(std::span<const MatchRecord> rows, const std::filesystem::path& path);
std::vector<ContrastivePair> read_pairs(const std::filesystem::path& path);
void write_pairs(std::span<const ContrastivePair> pairs, const std::filesystem::path& path);
std::vector<TurnText> read_turns(const std::filesystem::path& path);
void write_turns(std::span<const TurnText> turns, const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::string& text, const std::filesystem::path& path);

}  // namespace io
}  // namespace tokensteer
