#include "tokensteer/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "tokensteer/error.hpp"
#include "tokensteer/metrics.hpp"

namespace tokensteer::io {
namespace {

using nlohmann::json;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, double v, const char* what) {
  const auto f = static_cast<float>(v);
  if (!std::isfinite(f)) throw Error(ErrorCode::NonfiniteValue, std::string(what) + " not representable as f32");
  put_u32(out, std::bit_cast<std::uint32_t>(f));
}

std::uint32_t to_u32(std::size_t v, const char* what) {
  if (v > std::numeric_limits<std::uint32_t>::max())
    throw Error(ErrorCode::InvalidArgument, std::string(what) + " exceeds u32");
  return static_cast<std::uint32_t>(v);
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n)
      throw Error(ErrorCode::TruncatedPayload, std::string("file ends inside ") + what);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f32(const char* what) {
    const float f = std::bit_cast<float>(u32(what));
    if (!std::isfinite(f)) throw Error(ErrorCode::NonfiniteValue, what);
    return static_cast<double>(f);
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

Meta meta_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::SchemaMismatch, "meta must be a flat object");
  Meta meta;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_string()) throw Error(ErrorCode::SchemaMismatch, "meta value '" + k + "' is not a string");
    meta.emplace(k, v.get<std::string>());
  }
  return meta;
}

template <typename T>
T field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key))
    throw Error(ErrorCode::SchemaMismatch, std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, std::string("field '") + key + "': " + e.what());
  }
}

double finite_field(const json& j, const char* key) {
  const auto& v = j.contains(key) ? j.at(key) : json();
  if (!v.is_number()) throw Error(ErrorCode::SchemaMismatch, std::string("field '") + key + "' must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw Error(ErrorCode::NonfiniteValue, key);
  return x;
}

std::optional<double> optional_number(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return finite_field(j, key);
}

std::vector<double> finite_array(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_array())
    throw Error(ErrorCode::SchemaMismatch, std::string("field '") + key + "' must be an array");
  std::vector<double> out;
  out.reserve(j.at(key).size());
  for (const auto& v : j.at(key)) {
    if (!v.is_number()) throw Error(ErrorCode::SchemaMismatch, std::string(key) + " holds a non-number");
    out.push_back(v.get<double>());
    if (!std::isfinite(out.back())) throw Error(ErrorCode::NonfiniteValue, key);
  }
  return out;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

// ---------------------------------------------------------------------------
// ACTM

std::vector<std::uint8_t> encode_trace(const ActivationTrace& trace) {
  std::string meta_text;
  if (!trace.meta().empty()) meta_text = json(trace.meta()).dump();

  std::vector<std::uint8_t> out;
  const std::size_t n = trace.n_tokens();
  const std::size_t d = trace.d_model();
  out.reserve(kTraceHeaderBytes + meta_text.size() + 4 * n * d + n + (trace.logprobs() ? 4 * n : 0));
  out.insert(out.end(), std::begin(kTraceMagic), std::end(kTraceMagic));
  put_u32(out, kTraceVersion);
  put_u32(out, to_u32(d, "d_model"));
  put_u32(out, to_u32(static_cast<std::size_t>(trace.layer()), "layer"));
  put_u32(out, to_u32(n, "n_tokens"));
  out.push_back(trace.logprobs() ? 1 : 0);
  put_u32(out, to_u32(meta_text.size(), "meta_len"));
  out.insert(out.end(), meta_text.begin(), meta_text.end());
  for (double x : trace.hidden()) put_f32(out, x, "hidden component");
  for (Role r : trace.roles()) out.push_back(static_cast<std::uint8_t>(r));
  if (trace.logprobs()) {
    for (double lp : *trace.logprobs()) put_f32(out, lp, "logprob");
  }
  return out;
}

ActivationTrace decode_trace(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  const auto magic = in.take(4, "magic");
  if (std::memcmp(magic.data(), kTraceMagic, 4) != 0)
    throw Error(ErrorCode::MagicMismatch, "not an ACTM trace");
  const auto version = in.u32("version");
  if (version != kTraceVersion)
    throw Error(ErrorCode::VersionUnsupported, "ACTM version " + std::to_string(version));
  const std::size_t d = in.u32("d_model");
  const auto layer = in.u32("layer");
  const std::size_t n = in.u32("n_tokens");
  const auto flags = in.u8("flags");
  if ((flags & ~1u) != 0) throw Error(ErrorCode::InvalidFormat, "unknown flag bits");
  const auto meta_len = in.u32("meta_len");
  const auto meta_bytes = in.take(meta_len, "meta");
  if (layer > static_cast<std::uint32_t>(std::numeric_limits<int>::max()))
    throw Error(ErrorCode::InvalidFormat, "layer index too large");

  Meta meta;
  if (meta_len > 0) {
    json j;
    try {
      j = json::parse(meta_bytes.begin(), meta_bytes.end());
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidFormat, std::string("meta JSON: ") + e.what());
    }
    meta = meta_from_json(j);
  }

  // Size check before allocating.
  const std::size_t body = (4 * d + 1 + ((flags & 1) ? 4 : 0)) * n;
  if (n != 0 && d != 0 && (4 * d + 5) > std::numeric_limits<std::size_t>::max() / n)
    throw Error(ErrorCode::InvalidFormat, "payload size overflow");
  in.need(body, "payload");

  std::vector<double> hidden(n * d);
  for (auto& x : hidden) x = in.f32("hidden component");
  std::vector<Role> roles(n);
  for (auto& r : roles) {
    const auto b = in.u8("roles");
    if (b > 1) throw Error(ErrorCode::InvalidFormat, "role byte " + std::to_string(b));
    r = static_cast<Role>(b);
  }
  std::optional<std::vector<double>> logprobs;
  if (flags & 1) {
    logprobs.emplace(n);
    for (auto& lp : *logprobs) lp = in.f32("logprob");
  }
  if (in.remaining() != 0) throw Error(ErrorCode::InvalidFormat, "trailing bytes after payload");
  return ActivationTrace(static_cast<int>(layer), d, std::move(hidden), std::move(roles),
                         std::move(logprobs), std::move(meta));
}

ActivationTrace read_trace(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::MissingInput, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_trace(bytes);
}

void write_trace(const ActivationTrace& trace, const std::filesystem::path& path) {
  const auto bytes = encode_trace(trace);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Steering vector JSON

json to_json(const SteeringVector& v) {
  const auto& s = v.stats();
  return json{
      {"format_version", kSteeringVectorFormat},
      {"trait", v.trait()},
      {"layer", v.layer()},
      {"d_model", v.d_model()},
      {"source", std::string(to_string(v.source()))},
      {"direction", std::vector<double>(v.direction().begin(), v.direction().end())},
      {"delta_mu", v.delta_mu()},
      {"bias_rescaled", v.bias_rescaled()},
      {"boundary", v.boundary()},
      {"stats",
       {{"mu_plus", s.mu_plus},
        {"sigma_plus", s.sigma_plus},
        {"mu_minus", s.mu_minus},
        {"sigma_minus", s.sigma_minus},
        {"n_plus", s.n_plus},
        {"n_minus", s.n_minus},
        {"cohen_d", s.cohen_d}}},
      {"meta", v.meta()},
  };
}

SteeringVector steering_vector_from_json(const json& j) {
  static const char* const kKeys[] = {"format_version", "trait", "layer", "d_model", "source",
                                      "direction", "delta_mu", "bias_rescaled", "boundary",
                                      "stats", "meta"};
  static const char* const kStatKeys[] = {"mu_plus", "sigma_plus", "mu_minus", "sigma_minus",
                                          "n_plus", "n_minus", "cohen_d"};
  if (!j.is_object()) throw Error(ErrorCode::SchemaMismatch, "steering vector must be an object");
  for (const char* k : kKeys) {
    if (!j.contains(k)) throw Error(ErrorCode::SchemaMismatch, std::string("missing field '") + k + "'");
  }
  if (j.size() != std::size(kKeys)) throw Error(ErrorCode::SchemaMismatch, "unexpected extra fields");
  if (field<int>(j, "format_version") != kSteeringVectorFormat)
    throw Error(ErrorCode::SchemaMismatch, "unsupported format_version");
  const auto& st = j.at("stats");
  for (const char* k : kStatKeys) {
    if (!st.is_object() || !st.contains(k))
      throw Error(ErrorCode::SchemaMismatch, std::string("missing stats field '") + k + "'");
  }
  if (st.size() != std::size(kStatKeys)) throw Error(ErrorCode::SchemaMismatch, "unexpected stats fields");

  ProjectionStats stats{finite_field(st, "mu_plus"),     finite_field(st, "sigma_plus"),
                        finite_field(st, "mu_minus"),    finite_field(st, "sigma_minus"),
                        field<std::size_t>(st, "n_plus"), field<std::size_t>(st, "n_minus"),
                        finite_field(st, "cohen_d")};
  auto direction = finite_array(j, "direction");
  if (direction.size() != field<std::size_t>(j, "d_model"))
    throw Error(ErrorCode::SchemaMismatch, "direction length != d_model");
  VectorSource source;
  try {
    source = parse_source(field<std::string>(j, "source"));
  } catch (const Error& e) {
    throw Error(ErrorCode::SchemaMismatch, e.what());
  }
  return SteeringVector(field<int>(j, "layer"), std::move(direction), finite_field(j, "delta_mu"),
                        finite_field(j, "bias_rescaled"), finite_field(j, "boundary"), stats,
                        field<std::string>(j, "trait"), source, meta_from_json(j.at("meta")));
}

SteeringVector read_steering_vector(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, path.string() + ": " + e.what());
  }
  return steering_vector_from_json(j);
}

void write_steering_vector(const SteeringVector& v, const std::filesystem::path& path) {
  write_text(to_json(v).dump(2) + "\n", path);
}

// ---------------------------------------------------------------------------
// JSON-lines records

json to_json(const SweepRecord& r) {
  return json{
      {"method", std::string(to_string(r.method))},
      {"layer", r.layer ? json(*r.layer) : json(nullptr)},
      {"coefficient", optional_json(r.coefficient)},
      {"position", r.position ? json(std::string(to_string(*r.position))) : json(nullptr)},
      {"trait_mean", optional_json(r.trait_mean)},
      {"trait_ci", optional_json(r.trait_ci)},
      {"coherence_mean", optional_json(r.coherence_mean)},
      {"coherence_ci", optional_json(r.coherence_ci)},
  };
}

SweepRecord sweep_record_from_json(const json& j) {
  SweepRecord r;
  try {
    r.method = parse_method(field<std::string>(j, "method"));
    if (j.contains("position") && !j.at("position").is_null())
      r.position = parse_position(j.at("position").get<std::string>());
  } catch (const Error& e) {
    throw Error(ErrorCode::SchemaMismatch, e.what());
  }
  if (j.contains("layer") && !j.at("layer").is_null()) r.layer = field<int>(j, "layer");
  r.coefficient = optional_number(j, "coefficient");
  r.trait_mean = optional_number(j, "trait_mean");
  r.trait_ci = optional_number(j, "trait_ci");
  r.coherence_mean = optional_number(j, "coherence_mean");
  r.coherence_ci = optional_number(j, "coherence_ci");
  if (is_baseline(r.method)) {
    r.layer.reset();
    r.coefficient.reset();
    r.position.reset();
  }
  validate(r);
  return r;
}

json to_json(const MatchRecord& m) {
  return json{{"player_a", m.player_a},
              {"player_b", m.player_b},
              {"winner", std::string(to_string(m.winner))},
              {"prompt_id", m.prompt_id}};
}

MatchRecord match_record_from_json(const json& j) {
  MatchRecord m;
  m.player_a = field<std::string>(j, "player_a");
  m.player_b = field<std::string>(j, "player_b");
  m.winner = parse_winner(field<std::string>(j, "winner"));
  m.prompt_id = j.contains("prompt_id") ? field<std::string>(j, "prompt_id") : std::string();
  if (m.player_a == m.player_b) throw Error(ErrorCode::InvariantViolation, "player_a == player_b");
  return m;
}

json to_json(const ContrastivePair& p) {
  return json{{"scenario_id", p.scenario_id}, {"positive", p.positive}, {"negative", p.negative}};
}

ContrastivePair contrastive_pair_from_json(const json& j) {
  ContrastivePair p;
  p.scenario_id = j.contains("scenario_id") ? field<std::string>(j, "scenario_id") : std::string();
  p.positive = finite_array(j, "positive");
  p.negative = finite_array(j, "negative");
  if (p.positive.size() != p.negative.size())
    throw Error(ErrorCode::DimensionMismatch, "pair '" + p.scenario_id + "' halves differ in length");
  return p;
}

json to_json(const TurnText& t) {
  json sentences = json::array();
  for (const auto& s : t.sentences) {
    json e{{"text", s.text}};
    if (s.embedding) e["embedding"] = *s.embedding;
    sentences.push_back(std::move(e));
  }
  return json{{"turn_index", t.turn_index}, {"sentences", sentences}, {"tokens", t.tokens}};
}

TurnText turn_text_from_json(const json& j) {
  TurnText t;
  t.turn_index = field<int>(j, "turn_index");
  if (t.turn_index < 0) throw Error(ErrorCode::InvariantViolation, "negative turn_index");
  if (j.contains("sentences")) {
    for (const auto& s : j.at("sentences")) {
      Sentence sentence;
      sentence.text = field<std::string>(s, "text");
      if (s.contains("embedding") && !s.at("embedding").is_null())
        sentence.embedding = finite_array(s, "embedding");
      t.sentences.push_back(std::move(sentence));
    }
  }
  if (j.contains("tokens")) t.tokens = field<std::vector<std::string>>(j, "tokens");
  return t;
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::MissingInput, "cannot open " + path.string());
  std::vector<json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::SchemaMismatch,
                  path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

void write_jsonl(std::span<const json> rows, const std::filesystem::path& path) {
  std::string text;
  for (const auto& r : rows) {
    text += r.dump();
    text += '\n';
  }
  write_text(text, path);
}

namespace {

template <typename T, typename FromJson>
std::vector<T> read_rows(const std::filesystem::path& path, FromJson from_json) {
  std::vector<T> out;
  std::size_t i = 0;
  for (const auto& j : read_jsonl(path)) {
    ++i;
    try {
      out.push_back(from_json(j));
    } catch (const Error& e) {
      throw Error(e.code(), path.string() + " record " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

template <typename T>
void write_rows(std::span<const T> rows, const std::filesystem::path& path) {
  std::vector<json> js;
  js.reserve(rows.size());
  for (const auto& r : rows) js.push_back(to_json(r));
  write_jsonl(js, path);
}

}  // namespace

std::vector<SweepRecord> read_sweep_records(const std::filesystem::path& path) {
  return read_rows<SweepRecord>(path, sweep_record_from_json);
}
void write_sweep_records(std::span<const SweepRecord> rows, const std::filesystem::path& path) {
  write_rows(rows, path);
}
std::vector<MatchRecord> read_match_records(const std::filesystem::path& path) {
  return read_rows<MatchRecord>(path, match_record_from_json);
}
void write_match_records(std::span<const MatchRecord> rows, const std::filesystem::path& path) {
  write_rows(rows, path);
}
std::vector<ContrastivePair> read_pairs(const std::filesystem::path& path) {
  return read_rows<ContrastivePair>(path, contrastive_pair_from_json);
}
void write_pairs(std::span<const ContrastivePair> pairs, const std::filesystem::path& path) {
  write_rows(pairs, path);
}
std::vector<TurnText> read_turns(const std::filesystem::path& path) {
  return read_rows<TurnText>(path, turn_text_from_json);
}
void write_turns(std::span<const TurnText> turns, const std::filesystem::path& path) {
  write_rows(turns, path);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::MissingInput, "cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const std::string& text, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

}  // namespace tokensteer::io
