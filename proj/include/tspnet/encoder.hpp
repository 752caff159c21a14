#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tspnet/features.hpp"
#include "tspnet/nn.hpp"
#include "tspnet/segmenter.hpp"

namespace tspnet {

/// How multi-scale segment features become the L×D encoder memory.
enum class EncoderMode {
  single,          // self-attention over scale 0 only
  sequential,      // inter-scale neighborhood attention, then intra-scale
  joint,           // attention over extended neighborhoods
  pool,            // per-scale encoders, position-wise max across scales
  fc,              // position-wise concatenation through two FC layers, then intra-scale
  nonrestrictive,  // every pivot attends to all segments of all scales, then intra-scale
};

const char* to_string(EncoderMode mode);
EncoderMode encoder_mode_from_string(const std::string& name);

struct EncoderConfig {
  std::size_t input_dim = 32;  // D_in, per-frame feature size
  std::size_t model_dim = 128;  // D
  std::size_t inter_dim = 128;  // D′, shared space of W_g / W_c
  std::size_t intra_dim = 128;  // D″, self-attention space of W_e
  std::vector<std::size_t> widths = {8, 12, 16};
  std::size_t stride = 2;
  std::size_t max_positions = 512;  // rows of the positional table
  EncoderMode mode = EncoderMode::joint;
  Real dropout = 0;
};

/// Self-attention block: e = attn(hW_e, hW_e, hW_e), o = FC₂(GELU(FC₁ e)).
struct IntraScaleParams {
  Tensor w_e;  // D×D″
  FeedForward ffn;
};

/// Learnable encoder weights. Only the blocks the configured mode uses
/// are allocated. Projections are stored input-major (D×D′ for W_g),
/// i.e. transposed relative to the column-vector convention.
struct EncoderParams {
  EncoderConfig config;
  Linear input_proj;  // D_in → D
  Tensor pos_table;   // max_positions × D, shared by every scale

  Tensor w_g;  // sequential / nonrestrictive: D×D′
  FeedForward inter_ffn;  // D′ → D → D

  /// single / sequential / fc / nonrestrictive use one block; pool uses one per scale.
  std::vector<IntraScaleParams> intra;

  Tensor w_c;  // joint: D×D′
  FeedForward joint_ffn;  // D′ → D → D

  FeedForward fc_agg;  // fc: M·D → D → D

  static EncoderParams create(const EncoderConfig& config, Rng& rng);
  NamedTensors named_parameters() const;
};

/// Per-pivot attention weights over neighborhood members, in member order.
struct AttentionTrace {
  std::vector<Neighborhood> neighborhoods;
  std::vector<std::vector<Real>> weights;
};

struct EncodedVideo {
  Tensor memory;  // L×D
  MultiScaleLayout layout;
  std::optional<AttentionTrace> attention_trace;
};

struct EncodeOptions {
  bool keep_attention_trace = false;
  /// Source of dropout masks; dropout is skipped when null.
  Rng* dropout_rng = nullptr;
};

/// Layout for `seq` under the encoder's widths and stride.
MultiScaleLayout plan_layout_for(const FeatureSequence& seq, const EncoderConfig& config);

/// φ̂[i][k] = φ[i][k] + G_spe[k]; the same table row is added at index k of
/// every scale. Throws CapacityError when L exceeds the table.
std::vector<Tensor> shared_positional_encode(std::span<const Tensor> scale_features,
                                             const EncoderParams& params);

/// Keep-mask of `neighborhoods` over the scale-major flattening of all
/// segments (row k = pivot k).
AttentionMask neighborhood_mask(const MultiScaleLayout& layout, std::span<const Neighborhood> neighborhoods);

/// h_k = FFN(attn(W_g φ̂₀,ₖ, Z_k, Z_k)) where Z_k holds W_g z for every
/// member z of neighborhood k. Returns L×D.
Tensor inter_scale_aggregate(std::span<const Tensor> pos_features, std::span<const Neighborhood> neighborhoods,
                             const MultiScaleLayout& layout, const EncoderParams& params,
                             AttentionTrace* trace = nullptr, Rng* dropout_rng = nullptr);

/// e = attn(W_e h, W_e h, W_e h), o = FC₂(GELU(FC₁ e)). Returns L×D.
Tensor intra_scale_aggregate(const Tensor& h, const IntraScaleParams& block, Real dropout_rate = 0,
                             Rng* dropout_rng = nullptr);

/// Attention over extended neighborhoods projected by W_c, keeping the
/// output row of the pivot (member 0), followed by the joint FC pair.
Tensor joint_aggregate(std::span<const Tensor> pos_features, std::span<const Neighborhood> neighborhoods,
                       const MultiScaleLayout& layout, const EncoderParams& params,
                       AttentionTrace* trace = nullptr, Rng* dropout_rng = nullptr);

EncodedVideo encode(const FeatureSequence& seq, const MultiScaleLayout& layout, const EncoderParams& params,
                    const EncodeOptions& options = {});

}  // namespace tspnet
