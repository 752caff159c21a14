#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tspnet/decoder.hpp"
#include "tspnet/encoder.hpp"
#include "tspnet/features.hpp"

namespace tspnet {

/// Everything that shapes a training run. The defaults (lr and weight
/// decay 1e-4, 200 epochs, widths {8, 12, 16}, stride 2, D = 128) train
/// the synthetic corpus on one CPU core.
struct TrainConfig {
  // encoder
  std::vector<std::size_t> widths = {8, 12, 16};
  std::size_t stride = 2;
  EncoderMode mode = EncoderMode::joint;
  std::size_t model_dim = 128;
  std::size_t inter_dim = 128;
  std::size_t intra_dim = 128;
  std::size_t max_positions = 512;
  Real encoder_dropout = 0;
  // decoder
  std::size_t decoder_layers = 2;
  std::size_t decoder_heads = 4;
  std::size_t decoder_ff_dim = 0;  // 0 → 4·model_dim
  std::size_t max_target_length = 64;
  Real decoder_dropout = 0;
  // optimisation
  Real lr = Real(1e-4);
  Real weight_decay = Real(1e-4);
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real adam_eps = Real(1e-8);
  std::size_t epochs = 200;
  std::size_t batch_size = 8;
  Real label_smoothing = 0;
  std::uint64_t seed = 1;
  std::string precision = kRealName;
  /// Stop once an epoch's teacher-forced token accuracy reaches this (0 = never).
  double stop_at_accuracy = 0;
  // bookkeeping
  std::size_t checkpoint_interval = 0;  // epochs; 0 = final checkpoint only
  std::size_t eval_interval = 0;        // epochs between validation scores; 0 = never
  bool log_wall_time = true;
  // inference
  std::size_t beam_width = 5;
  Real length_penalty = 1;
  std::size_t max_decode_length = 50;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
/// Strict parse: unknown keys and wrong types raise ConfigError with a
/// dotted field path rooted at `path`.
TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& path = "train");

nlohmann::json to_json(const SyntheticConfig& cfg);
SyntheticConfig synthetic_config_from_json(const nlohmann::json& j, const std::string& path = "synth");

EncoderConfig encoder_config(const TrainConfig& cfg, std::size_t input_dim);
DecoderConfig decoder_config(const TrainConfig& cfg, std::size_t vocab_size);

/// Command-line run description.
struct RunConfig {
  std::uint64_t seed = 1;
  SyntheticConfig synth;
  std::size_t synth_sentences = 50;
  TrainConfig train;
  std::string corpus;      // training manifest
  std::string validation;  // optional validation manifest
  std::string output_dir;
};

/// Parses a RunConfig; `seed` propagates into the synthetic and training sections.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);

}  // namespace tspnet
