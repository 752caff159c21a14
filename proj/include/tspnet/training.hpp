#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tspnet/adam.hpp"
#include "tspnet/config.hpp"
#include "tspnet/decoder.hpp"
#include "tspnet/encoder.hpp"
#include "tspnet/features.hpp"
#include "tspnet/metrics.hpp"
#include "tspnet/random.hpp"

namespace tspnet {

/// Encoder, decoder and the vocabulary they were built for.
struct Model {
  TrainConfig config;
  std::size_t input_dim = 0;
  Vocabulary vocab;
  EncoderParams encoder;
  DecoderParams decoder;

  static Model create(const TrainConfig& config, std::size_t input_dim, Vocabulary vocab, Rng& rng);
  NamedTensors named_parameters() const;
  std::vector<Tensor> parameters() const;
  EncodedVideo encode(const FeatureSequence& seq, const EncodeOptions& options = {}) const;
};

/// Sentences grouped for one optimiser step. Targets are right-padded with
/// <pad> to the longest sentence; `target_mask` marks real positions.
/// Every video keeps its own layout, so encoder memories are never padded.
struct Batch {
  std::vector<const CorpusEntry*> entries;
  std::vector<MultiScaleLayout> layouts;
  std::size_t max_target_length = 0;
  std::vector<std::vector<TokenId>> decoder_inputs;  // <bos> + target[..−1], padded
  std::vector<std::vector<TokenId>> labels;          // target, padded
  std::vector<std::vector<std::uint8_t>> target_mask;
  std::size_t token_count = 0;

  std::size_t size() const { return entries.size(); }
  std::size_t target_length(std::size_t i) const;
};

Batch make_batch(std::span<const CorpusEntry* const> entries, const TrainConfig& config);

struct BatchLoss {
  Tensor loss;                        // token-weighted mean cross-entropy
  std::vector<Real> sentence_losses;  // per-sentence mean cross-entropy
  std::vector<std::size_t> sentence_tokens;
  std::size_t tokens = 0;
  std::size_t correct = 0;  // teacher-forced argmax hits
};

/// Loss of a batch: the sum of every sentence's summed token losses over
/// the total token count, i.e. the token-weighted mean of sentence losses.
BatchLoss batch_loss(const Model& model, const Batch& batch, Real label_smoothing = 0, Rng* dropout_rng = nullptr);

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0;
  double lr = 0;
  double wall_ms = 0;
  double token_accuracy = 0;
  std::optional<ScoreReport> validation;
};

nlohmann::json to_json(const EpochLog& log, bool with_wall_time = true);

/// Complete training state. Reloading reproduces forward passes
/// bit-identically on the same platform.
struct Checkpoint {
  Model model;
  std::vector<AdamMoments> moments;  // parallel to model.named_parameters()
  std::uint64_t adam_step = 0;
  std::size_t epoch = 0;
  std::string rng_state;
};

// Checkpoint file: one line of JSON header terminated by '\n'
// {"format": "tspnet-checkpoint", "version": 1, "config", "input_dim",
//  "vocabulary", "epoch", "adam_step", "rng_state",
//  "tensors": [{"name", "shape", "dtype", "offset", "length"}]}
// followed by the raw little-endian tensor payload; offsets are relative
// to the first payload byte.
inline constexpr int kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainHooks {
  std::function<void(const EpochLog&)> on_epoch;
  std::function<void(const Checkpoint&)> on_checkpoint;
  /// Scored with the configured beam every eval_interval epochs.
  const std::vector<CorpusEntry>* validation = nullptr;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> log;
};

/// Optimises a fresh model on `corpus`. The vocabulary is built from the
/// corpus texts. Shuffling, initialisation and dropout all draw from
/// Rng(config.seed), so a (seed, config, corpus) triple fixes every result.
/// Throws DivergenceError on a non-finite loss.
TrainResult train(const std::vector<CorpusEntry>& corpus, const TrainConfig& config, const TrainHooks& hooks = {});

/// Batches for one epoch: shuffled, sorted by pivot count inside pools of
/// 4·batch_size to limit length spread, batch order shuffled again.
std::vector<std::vector<std::size_t>> plan_epoch(std::span<const MultiScaleLayout> layouts, std::size_t batch_size,
                                                 Rng& rng);

/// Re-encodes targets of `corpus` under `vocab`.
std::vector<CorpusEntry> retokenize(const std::vector<CorpusEntry>& corpus, const Vocabulary& vocab);

/// Fraction of target tokens whose teacher-forced argmax (ties → lowest id)
/// is correct.
double teacher_forced_accuracy(const Model& model, const std::vector<CorpusEntry>& corpus);

struct DecodeOptions {
  std::size_t beam_width = 5;  // 1 selects greedy decoding
  std::size_t max_len = 50;
  Real length_penalty = 1;
};

DecodeResult translate(const Model& model, const FeatureSequence& seq, const DecodeOptions& options);

struct SentenceResult {
  std::string id;
  std::string hypothesis;
  std::string reference;
  double rouge_l = 0;
};

struct EvaluationReport {
  ScoreReport scores;
  std::vector<SentenceResult> sentences;
};

nlohmann::json to_json(const EvaluationReport& report);

/// Decodes every entry and scores against its raw text. Sentences are
/// spread over `threads` workers (0 → TSP_THREADS or hardware concurrency).
EvaluationReport evaluate(const std::vector<CorpusEntry>& corpus, const Model& model, const DecodeOptions& options,
                          std::size_t threads = 0);

}  // namespace tspnet
