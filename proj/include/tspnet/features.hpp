#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tspnet/ops.hpp"
#include "tspnet/segmenter.hpp"
#include "tspnet/tensor.hpp"
#include "tspnet/vocabulary.hpp"

namespace tspnet {

/// Per-frame feature vectors of one video, frames × dim, row-major.
struct FeatureSequence {
  std::string video_id;
  std::size_t frames = 0;
  std::size_t dim = 0;
  std::vector<float> data;

  const float* frame(std::size_t t) const { return data.data() + t * dim; }
  /// Throws PreconditionError when sizes disagree or values are not finite.
  void validate() const;
};

struct CorpusEntry {
  FeatureSequence features;
  std::vector<TokenId> target_tokens;  // ends with <eos>
  std::string raw_text;
};

// Feature file: "TSPF", u32 version = 1, u32 frames, u32 dim, then
// frames·dim float32 values row-major. All little-endian.
inline constexpr std::uint32_t kFeatureFileVersion = 1;

std::vector<std::uint8_t> encode_feature_file(const FeatureSequence& seq);
/// Throws FormatError with the byte offset of the first problem.
FeatureSequence decode_feature_file(std::span<const std::uint8_t> bytes, std::string video_id = {});
void write_feature_file(const std::filesystem::path& path, const FeatureSequence& seq);
FeatureSequence load_feature_file(const std::filesystem::path& path);

/// Manifest row: {"id": ..., "features": relative path, "text": ...}.
struct ManifestRow {
  std::string id;
  std::string features;
  std::string text;
};

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows);

/// Loads every manifest row, resolving feature paths against the
/// manifest's directory and encoding text with `vocab`.
std::vector<CorpusEntry> load_corpus(const std::filesystem::path& manifest, const Vocabulary& vocab);

/// Writes `<dir>/manifest.jsonl` and one `<dir>/features/<id>.tspf` per entry.
void save_corpus(const std::filesystem::path& dir, const std::vector<CorpusEntry>& corpus);

enum class ReorderRule { identity, pair_swap };

const char* to_string(ReorderRule rule);
ReorderRule reorder_rule_from_string(const std::string& name);

/// Word order of `gestures` under `rule`. pair_swap exchanges positions
/// (0,1), (2,3), ...; an odd trailing gesture stays put.
std::vector<std::size_t> apply_reorder(const std::vector<std::size_t>& gestures, ReorderRule rule);

struct SyntheticConfig {
  std::size_t gesture_vocab_size = 20;
  std::size_t feature_dim = 32;
  std::size_t min_duration = 8;
  std::size_t max_duration = 16;
  double noise_sigma = 0.05;
  std::size_t min_sentence_length = 3;
  std::size_t max_sentence_length = 6;
  ReorderRule reorder = ReorderRule::pair_swap;
  std::uint64_t seed = 1;
};

/// Word for gesture g: "g" followed by g zero-padded to the width of the
/// largest id, so lexicographic and numeric order agree.
std::string gesture_word(std::size_t gesture, std::size_t vocab_size);
/// Vocabulary holding every gesture word of `cfg`.
Vocabulary synthetic_vocabulary(const SyntheticConfig& cfg);

/// Deterministic corpus of gesture sentences with unknown boundaries.
///
/// Draw order from Rng(seed): prototypes (dim normals per gesture,
/// normalised to unit length), then per sentence: its length, its gesture
/// ids, and per gesture its duration followed by frames·dim noise draws.
/// Targets use synthetic_vocabulary(cfg).
std::vector<CorpusEntry> generate_synthetic_corpus(const SyntheticConfig& cfg, std::size_t n_sentences);

/// Mean of frames [start, start + width); frames past the end of `seq`
/// repeat its last frame.
std::vector<Real> segment_feature(const FeatureSequence& seq, const SegmentIndex& seg,
                                  const MultiScaleLayout& layout);

/// L × dim matrix of all segment features at `scale`.
Tensor segment_feature_matrix(const FeatureSequence& seq, const MultiScaleLayout& layout, std::size_t scale);

}  // namespace tspnet
