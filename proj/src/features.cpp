#include "tspnet/features.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "tspnet/errors.hpp"
#include "tspnet/random.hpp"

namespace tspnet {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kHeaderBytes = 16;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  return v;
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void FeatureSequence::validate() const {
  if (frames == 0 || dim == 0) throw PreconditionError("feature sequence must have frames and dim >= 1");
  if (data.size() != frames * dim) throw PreconditionError("feature sequence data size mismatch");
  for (float v : data) {
    if (!std::isfinite(v)) throw PreconditionError("feature sequence contains a non-finite value");
  }
}

std::vector<std::uint8_t> encode_feature_file(const FeatureSequence& seq) {
  seq.validate();
  if (seq.frames > std::numeric_limits<std::uint32_t>::max() ||
      seq.dim > std::numeric_limits<std::uint32_t>::max()) {
    throw PreconditionError("feature sequence too large for the file format");
  }
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + 4 * seq.data.size());
  for (char c : {'T', 'S', 'P', 'F'}) out.push_back(static_cast<std::uint8_t>(c));
  put_u32(out, kFeatureFileVersion);
  put_u32(out, static_cast<std::uint32_t>(seq.frames));
  put_u32(out, static_cast<std::uint32_t>(seq.dim));
  for (float v : seq.data) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

FeatureSequence decode_feature_file(std::span<const std::uint8_t> bytes, std::string video_id) {
  if (bytes.size() < 4) throw FormatError("truncated magic", bytes.size());
  if (bytes[0] != 'T' || bytes[1] != 'S' || bytes[2] != 'P' || bytes[3] != 'F') {
    throw FormatError("bad magic, expected TSPF", 0);
  }
  if (bytes.size() < kHeaderBytes) throw FormatError("truncated header", bytes.size());
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kFeatureFileVersion) {
    throw FormatError("unsupported feature file version " + std::to_string(version), 4);
  }
  const std::uint64_t frames = get_u32(bytes, 8);
  const std::uint64_t dim = get_u32(bytes, 12);
  if (frames == 0) throw FormatError("frame count must be positive", 8);
  if (dim == 0) throw FormatError("feature dim must be positive", 12);
  const std::uint64_t count = frames * dim;  // both < 2^32, cannot wrap
  if (count > (std::numeric_limits<std::size_t>::max() - kHeaderBytes) / 4) {
    throw FormatError("frames x dim overflows", 8);
  }
  const std::size_t expected = kHeaderBytes + static_cast<std::size_t>(count) * 4;
  if (bytes.size() < expected) throw FormatError("truncated payload", bytes.size());
  if (bytes.size() > expected) throw FormatError("trailing bytes after payload", expected);

  FeatureSequence seq;
  seq.video_id = std::move(video_id);
  seq.frames = static_cast<std::size_t>(frames);
  seq.dim = static_cast<std::size_t>(dim);
  seq.data.resize(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < seq.data.size(); ++i) {
    const std::size_t offset = kHeaderBytes + 4 * i;
    const float v = std::bit_cast<float>(get_u32(bytes, offset));
    if (!std::isfinite(v)) throw FormatError("non-finite feature value", offset);
    seq.data[i] = v;
  }
  return seq;
}

void write_feature_file(const fs::path& path, const FeatureSequence& seq) {
  const auto bytes = encode_feature_file(seq);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

FeatureSequence load_feature_file(const fs::path& path) {
  const auto bytes = read_bytes(path);
  return decode_feature_file(bytes, path.stem().string());
}

std::vector<ManifestRow> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest " + path.string());
  std::vector<ManifestRow> rows;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(std::string("manifest: ") + e.what(), line_start + e.byte);
    }
    if (!j.is_object() || !j.contains("id") || !j.contains("features") || !j.contains("text") ||
        !j["id"].is_string() || !j["features"].is_string() || !j["text"].is_string()) {
      throw FormatError("manifest rows need string fields id, features, text", line_start);
    }
    rows.push_back({j["id"].get<std::string>(), j["features"].get<std::string>(), j["text"].get<std::string>()});
  }
  return rows;
}

void write_manifest(const fs::path& path, const std::vector<ManifestRow>& rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write manifest " + path.string());
  for (const auto& r : rows) {
    out << nlohmann::json{{"id", r.id}, {"features", r.features}, {"text", r.text}}.dump() << '\n';
  }
}

std::vector<CorpusEntry> load_corpus(const fs::path& manifest, const Vocabulary& vocab) {
  const auto rows = read_manifest(manifest);
  const fs::path base = manifest.parent_path();
  std::vector<CorpusEntry> corpus;
  corpus.reserve(rows.size());
  for (const auto& r : rows) {
    CorpusEntry e;
    e.features = load_feature_file(base / r.features);
    e.features.video_id = r.id;
    e.raw_text = r.text;
    e.target_tokens = vocab.encode(r.text);
    corpus.push_back(std::move(e));
  }
  return corpus;
}

void save_corpus(const fs::path& dir, const std::vector<CorpusEntry>& corpus) {
  fs::create_directories(dir / "features");
  std::vector<ManifestRow> rows;
  rows.reserve(corpus.size());
  for (const auto& e : corpus) {
    const std::string rel = "features/" + e.features.video_id + ".tspf";
    write_feature_file(dir / rel, e.features);
    rows.push_back({e.features.video_id, rel, e.raw_text});
  }
  write_manifest(dir / "manifest.jsonl", rows);
}

const char* to_string(ReorderRule rule) {
  return rule == ReorderRule::identity ? "identity" : "pair_swap";
}

ReorderRule reorder_rule_from_string(const std::string& name) {
  if (name == "identity") return ReorderRule::identity;
  if (name == "pair_swap") return ReorderRule::pair_swap;
  throw ConfigError("reorder", "unknown reorder rule '" + name + "'");
}

std::vector<std::size_t> apply_reorder(const std::vector<std::size_t>& gestures, ReorderRule rule) {
  std::vector<std::size_t> out = gestures;
  if (rule == ReorderRule::pair_swap) {
    for (std::size_t i = 0; i + 1 < out.size(); i += 2) std::swap(out[i], out[i + 1]);
  }
  return out;
}

std::string gesture_word(std::size_t gesture, std::size_t vocab_size) {
  const std::size_t width = std::to_string(vocab_size > 0 ? vocab_size - 1 : 0).size();
  std::string digits = std::to_string(gesture);
  if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
  return "g" + digits;
}

Vocabulary synthetic_vocabulary(const SyntheticConfig& cfg) {
  std::vector<std::string> words;
  for (std::size_t g = 0; g < cfg.gesture_vocab_size; ++g) words.push_back(gesture_word(g, cfg.gesture_vocab_size));
  return Vocabulary::from_words(std::move(words));
}

std::vector<CorpusEntry> generate_synthetic_corpus(const SyntheticConfig& cfg, std::size_t n_sentences) {
  if (n_sentences == 0) throw PreconditionError("synthetic corpus needs at least one sentence");
  if (cfg.gesture_vocab_size == 0) throw ConfigError("gesture_vocab_size", "must be positive");
  if (cfg.feature_dim == 0) throw ConfigError("feature_dim", "must be positive");
  if (cfg.min_duration == 0 || cfg.max_duration < cfg.min_duration) {
    throw ConfigError("duration", "need 1 <= min_duration <= max_duration");
  }
  if (cfg.min_sentence_length == 0 || cfg.max_sentence_length < cfg.min_sentence_length) {
    throw ConfigError("sentence_length", "need 1 <= min <= max");
  }
  if (!(cfg.noise_sigma >= 0)) throw ConfigError("noise_sigma", "must be >= 0");

  Rng rng(cfg.seed);
  const std::size_t dim = cfg.feature_dim;
  std::vector<std::vector<double>> prototypes(cfg.gesture_vocab_size, std::vector<double>(dim));
  for (auto& p : prototypes) {
    double norm = 0;
    for (auto& v : p) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : p) v /= norm;
  }

  const Vocabulary vocab = synthetic_vocabulary(cfg);
  const std::size_t id_width = std::to_string(n_sentences - 1).size();
  std::vector<CorpusEntry> corpus;
  corpus.reserve(n_sentences);
  for (std::size_t s = 0; s < n_sentences; ++s) {
    const auto length = static_cast<std::size_t>(rng.uniform_int(
        static_cast<long long>(cfg.min_sentence_length), static_cast<long long>(cfg.max_sentence_length)));
    std::vector<std::size_t> gestures(length);
    for (auto& g : gestures) g = static_cast<std::size_t>(rng.uniform_int(cfg.gesture_vocab_size));

    CorpusEntry entry;
    FeatureSequence& seq = entry.features;
    std::string sid = std::to_string(s);
    seq.video_id = "syn" + std::string(id_width - sid.size(), '0') + sid;
    seq.dim = dim;
    for (std::size_t g : gestures) {
      const auto duration = static_cast<std::size_t>(rng.uniform_int(
          static_cast<long long>(cfg.min_duration), static_cast<long long>(cfg.max_duration)));
      for (std::size_t t = 0; t < duration; ++t) {
        for (std::size_t d = 0; d < dim; ++d) {
          seq.data.push_back(static_cast<float>(prototypes[g][d] + cfg.noise_sigma * rng.normal()));
        }
      }
      seq.frames += duration;
    }
    for (std::size_t g : apply_reorder(gestures, cfg.reorder)) {
      if (!entry.raw_text.empty()) entry.raw_text += ' ';
      entry.raw_text += gesture_word(g, cfg.gesture_vocab_size);
    }
    entry.target_tokens = vocab.encode(entry.raw_text);
    corpus.push_back(std::move(entry));
  }
  return corpus;
}

std::vector<Real> segment_feature(const FeatureSequence& seq, const SegmentIndex& seg,
                                  const MultiScaleLayout& layout) {
  if (seg.width == 0 || seg.end() > layout.padded_length) {
    throw PreconditionError("segment [" + std::to_string(seg.start) + ", " + std::to_string(seg.end()) +
                            ") outside padded length " + std::to_string(layout.padded_length));
  }
  if (seq.frames == 0) throw PreconditionError("feature sequence is empty");
  std::vector<Real> out(seq.dim, Real(0));
  for (std::size_t t = seg.start; t < seg.end(); ++t) {
    const float* f = seq.frame(std::min(t, seq.frames - 1));
    for (std::size_t d = 0; d < seq.dim; ++d) out[d] += static_cast<Real>(f[d]);
  }
  for (auto& v : out) v /= static_cast<Real>(seg.width);
  return out;
}

Tensor segment_feature_matrix(const FeatureSequence& seq, const MultiScaleLayout& layout, std::size_t scale) {
  std::vector<Real> values;
  values.reserve(layout.pivot_count * seq.dim);
  for (const auto& seg : windowing_segments(layout, scale)) {
    const auto f = segment_feature(seq, seg, layout);
    values.insert(values.end(), f.begin(), f.end());
  }
  return Tensor::from({layout.pivot_count, seq.dim}, std::move(values));
}

}  // namespace tspnet
