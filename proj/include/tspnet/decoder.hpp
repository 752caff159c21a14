#pragma once

#include <span>
#include <vector>

#include "tspnet/nn.hpp"
#include "tspnet/vocabulary.hpp"

namespace tspnet {

struct DecoderConfig {
  std::size_t vocab_size = 0;
  std::size_t model_dim = 128;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ff_dim = 0;  // 0 selects 4·model_dim
  std::size_t max_length = 64;  // positions, including <bos>
  Real dropout = 0;

  std::size_t inner_dim() const { return ff_dim ? ff_dim : 4 * model_dim; }
};

/// Multi-head projections; every matrix is D×D with a 1×D bias.
struct MultiHeadAttentionParams {
  Linear query, key, value, output;

  static MultiHeadAttentionParams create(std::size_t dim, Rng& rng);
  void collect(const std::string& prefix, NamedTensors& out) const;
};

/// Pre-norm block: masked self-attention, cross-attention over the
/// encoder memory, ReLU feed-forward; each wrapped in a residual.
struct DecoderLayerParams {
  LayerNormParams self_norm, cross_norm, ff_norm;
  MultiHeadAttentionParams self_attn, cross_attn;
  Linear ff_inner, ff_outer;
};

struct DecoderParams {
  DecoderConfig config;
  Tensor embedding;  // V×D
  Tensor positions;  // max_length×D, sinusoidal at init, learned
  std::vector<DecoderLayerParams> layers;
  LayerNormParams final_norm;
  Linear output;  // D×V plus bias

  static DecoderParams create(const DecoderConfig& config, Rng& rng);
  NamedTensors named_parameters() const;
};

/// Teacher-forced logits. `inputs` starts with <bos>; row t of the result
/// scores the token following inputs[0..t]. Returns T×V.
Tensor decode_train(const Tensor& memory, std::span<const TokenId> inputs, const DecoderParams& params,
                    Rng* dropout_rng = nullptr);

struct DecodeResult {
  std::vector<TokenId> tokens;  // generated ids, excluding <bos> and <eos>
  bool finished = false;        // ended by <eos>
  Real log_prob = 0;            // sum over generated tokens, <eos> included
  Real score = 0;               // log_prob / length^α
};

/// Log-probability of `continuation` (ids after <bos>) under the model.
Real sequence_log_prob(const Tensor& memory, std::span<const TokenId> continuation, const DecoderParams& params);

/// Argmax decoding from <bos>; ties pick the lowest id, <pad> and <bos> are
/// never emitted. Stops at <eos> or after max_len generated tokens.
DecodeResult greedy_decode(const Tensor& memory, const DecoderParams& params, std::size_t max_len);

struct BeamOptions {
  std::size_t width = 5;
  std::size_t max_len = 50;
  Real length_penalty = 1;  // α
};

/// Beam search scoring hypotheses by log_prob / length^α, where length
/// counts generated tokens including <eos>. Each step ranks every
/// expansion of the live hypotheses and keeps the top `width`; those
/// ending in <eos> retire. Returns the best retired hypothesis, or the
/// best live one when none retired.
DecodeResult beam_decode(const Tensor& memory, const DecoderParams& params, const BeamOptions& options);

}  // namespace tspnet
