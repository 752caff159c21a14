#include "tspnet/encoder.hpp"

#include "tspnet/errors.hpp"

namespace tspnet {

namespace {

Tensor maybe_dropout(const Tensor& x, Real rate, Rng* rng) {
  return (rng && rate > 0) ? dropout(x, rate, *rng) : x;
}

void check_neighborhoods(std::span<const Neighborhood> neighborhoods, const MultiScaleLayout& layout,
                         bool extended) {
  if (neighborhoods.size() != layout.pivot_count) {
    throw PreconditionError("expected one neighborhood per pivot (" + std::to_string(layout.pivot_count) +
                            "), got " + std::to_string(neighborhoods.size()));
  }
  for (std::size_t k = 0; k < neighborhoods.size(); ++k) {
    const Neighborhood& nb = neighborhoods[k];
    if (nb.extended != extended) {
      throw PreconditionError(extended ? "joint aggregation needs extended neighborhoods"
                                       : "inter-scale aggregation needs surrounding neighborhoods");
    }
    if (nb.members.empty() || nb.members.front() != nb.pivot || nb.pivot.scale != 0 || nb.pivot.index != k) {
      throw PreconditionError("neighborhood " + std::to_string(k) + " does not lead with its pivot");
    }
  }
}

void fill_trace(AttentionTrace* trace, const Tensor& weights, std::span<const Neighborhood> neighborhoods,
                const MultiScaleLayout& layout) {
  if (!trace) return;
  trace->neighborhoods.assign(neighborhoods.begin(), neighborhoods.end());
  trace->weights.clear();
  for (std::size_t k = 0; k < neighborhoods.size(); ++k) {
    std::vector<Real> row;
    for (const auto& m : neighborhoods[k].members) row.push_back(weights.at(k, layout.flat(m.scale, m.index)));
    trace->weights.push_back(std::move(row));
  }
}

// Neighborhoods covering every segment of every scale, pivot first.
std::vector<Neighborhood> all_segment_neighborhoods(const MultiScaleLayout& layout) {
  std::vector<Neighborhood> out;
  for (std::size_t k = 0; k < layout.pivot_count; ++k) {
    Neighborhood nb;
    nb.pivot = segment_at(layout, 0, k);
    nb.members.push_back(nb.pivot);
    for (std::size_t i = 0; i < layout.num_scales(); ++i) {
      for (std::size_t j = 0; j < layout.pivot_count; ++j) {
        if (i != 0 || j != k) nb.members.push_back(segment_at(layout, i, j));
      }
    }
    out.push_back(std::move(nb));
  }
  return out;
}

// Attention of every scale-0 projection over the masked set of projected segments.
Tensor pivot_attention(std::span<const Tensor> pos_features, const Tensor& projection,
                       const AttentionMask& mask, const MultiScaleLayout& layout, Tensor* weights) {
  const Tensor all = concat_rows(pos_features);
  const Tensor projected = matmul(all, projection);
  const Tensor pivots = slice_rows(projected, 0, layout.pivot_count);
  return masked_attention(pivots, projected, projected, mask, weights);
}

void check_scales(std::span<const Tensor> pos_features, const MultiScaleLayout& layout) {
  if (pos_features.size() != layout.num_scales()) {
    throw DimensionError("expected " + std::to_string(layout.num_scales()) + " scales of features, got " +
                         std::to_string(pos_features.size()));
  }
  for (const auto& f : pos_features) {
    if (f.rows() != layout.pivot_count) throw DimensionError("every scale needs exactly L segment features");
  }
}

}  // namespace

const char* to_string(EncoderMode mode) {
  switch (mode) {
    case EncoderMode::single: return "single";
    case EncoderMode::sequential: return "sequential";
    case EncoderMode::joint: return "joint";
    case EncoderMode::pool: return "pool";
    case EncoderMode::fc: return "fc";
    case EncoderMode::nonrestrictive: return "nonrestrictive";
  }
  return "?";
}

EncoderMode encoder_mode_from_string(const std::string& name) {
  for (auto m : {EncoderMode::single, EncoderMode::sequential, EncoderMode::joint, EncoderMode::pool,
                 EncoderMode::fc, EncoderMode::nonrestrictive}) {
    if (name == to_string(m)) return m;
  }
  throw ConfigError("mode", "unknown encoder mode '" + name + "'");
}

EncoderParams EncoderParams::create(const EncoderConfig& config, Rng& rng) {
  if (config.input_dim == 0 || config.model_dim == 0 || config.inter_dim == 0 || config.intra_dim == 0) {
    throw ConfigError("encoder", "dimensions must be positive");
  }
  if (config.max_positions == 0) throw ConfigError("encoder.max_positions", "must be positive");
  if (config.dropout < 0 || config.dropout >= 1) throw ConfigError("encoder.dropout", "must lie in [0, 1)");
  plan_layout(config.widths.empty() ? 1 : config.widths.front(), config.widths, config.stride);

  const std::size_t d = config.model_dim;
  EncoderParams p;
  p.config = config;
  p.input_proj = Linear::create(config.input_dim, d, rng);
  p.pos_table = Tensor::zeros({config.max_positions, d}, true);

  auto make_intra = [&] {
    IntraScaleParams block;
    block.w_e = init_weight(d, config.intra_dim, rng);
    block.ffn = FeedForward::create(config.intra_dim, d, d, rng);
    return block;
  };

  switch (config.mode) {
    case EncoderMode::single:
      p.intra.push_back(make_intra());
      break;
    case EncoderMode::sequential:
    case EncoderMode::nonrestrictive:
      p.w_g = init_weight(d, config.inter_dim, rng);
      p.inter_ffn = FeedForward::create(config.inter_dim, d, d, rng);
      p.intra.push_back(make_intra());
      break;
    case EncoderMode::joint:
      p.w_c = init_weight(d, config.inter_dim, rng);
      p.joint_ffn = FeedForward::create(config.inter_dim, d, d, rng);
      break;
    case EncoderMode::pool:
      for (std::size_t i = 0; i < config.widths.size(); ++i) p.intra.push_back(make_intra());
      break;
    case EncoderMode::fc:
      p.fc_agg = FeedForward::create(config.widths.size() * d, d, d, rng);
      p.intra.push_back(make_intra());
      break;
  }
  return p;
}

NamedTensors EncoderParams::named_parameters() const {
  NamedTensors out;
  input_proj.collect("encoder.input_proj", out);
  out.emplace_back("encoder.pos_table", pos_table);
  if (w_g.defined()) {
    out.emplace_back("encoder.inter.w_g", w_g);
    inter_ffn.collect("encoder.inter.ffn", out);
  }
  for (std::size_t i = 0; i < intra.size(); ++i) {
    const std::string prefix = "encoder.intra" + (intra.size() > 1 ? std::to_string(i) : std::string());
    out.emplace_back(prefix + ".w_e", intra[i].w_e);
    intra[i].ffn.collect(prefix + ".ffn", out);
  }
  if (w_c.defined()) {
    out.emplace_back("encoder.joint.w_c", w_c);
    joint_ffn.collect("encoder.joint.ffn", out);
  }
  if (fc_agg.inner.weight.defined()) fc_agg.collect("encoder.fc_agg", out);
  return out;
}

MultiScaleLayout plan_layout_for(const FeatureSequence& seq, const EncoderConfig& config) {
  return plan_layout(seq.frames, config.widths, config.stride);
}

std::vector<Tensor> shared_positional_encode(std::span<const Tensor> scale_features, const EncoderParams& params) {
  if (scale_features.empty()) throw PreconditionError("no scales to encode");
  const std::size_t L = scale_features.front().rows();
  if (L > params.pos_table.rows()) {
    throw CapacityError("video has " + std::to_string(L) + " segments per scale but the positional table holds " +
                        std::to_string(params.pos_table.rows()));
  }
  const Tensor rows = slice_rows(params.pos_table, 0, L);
  std::vector<Tensor> out;
  out.reserve(scale_features.size());
  for (const auto& f : scale_features) {
    if (f.rows() != L) throw DimensionError("every scale needs the same number of segments");
    out.push_back(add(f, rows));
  }
  return out;
}

AttentionMask neighborhood_mask(const MultiScaleLayout& layout, std::span<const Neighborhood> neighborhoods) {
  AttentionMask mask{neighborhoods.size(), layout.total_segments(),
                     std::vector<std::uint8_t>(neighborhoods.size() * layout.total_segments(), 0)};
  for (std::size_t k = 0; k < neighborhoods.size(); ++k) {
    for (const auto& m : neighborhoods[k].members) mask.allow(k, layout.flat(m.scale, m.index));
  }
  return mask;
}

Tensor inter_scale_aggregate(std::span<const Tensor> pos_features, std::span<const Neighborhood> neighborhoods,
                             const MultiScaleLayout& layout, const EncoderParams& params, AttentionTrace* trace,
                             Rng* dropout_rng) {
  if (!params.w_g.defined()) throw PreconditionError("encoder has no inter-scale parameters");
  check_scales(pos_features, layout);
  check_neighborhoods(neighborhoods, layout, false);
  Tensor weights;
  Tensor c = pivot_attention(pos_features, params.w_g, neighborhood_mask(layout, neighborhoods), layout,
                             trace ? &weights : nullptr);
  fill_trace(trace, weights, neighborhoods, layout);
  c = maybe_dropout(c, params.config.dropout, dropout_rng);
  return params.inter_ffn(c);
}

Tensor intra_scale_aggregate(const Tensor& h, const IntraScaleParams& block, Real dropout_rate, Rng* dropout_rng) {
  const Tensor projected = matmul(h, block.w_e);
  Tensor e = scaled_dot_attention(projected, projected, projected);
  e = maybe_dropout(e, dropout_rate, dropout_rng);
  return block.ffn(e);
}

Tensor joint_aggregate(std::span<const Tensor> pos_features, std::span<const Neighborhood> neighborhoods,
                       const MultiScaleLayout& layout, const EncoderParams& params, AttentionTrace* trace,
                       Rng* dropout_rng) {
  if (!params.w_c.defined()) throw PreconditionError("encoder has no joint parameters");
  check_scales(pos_features, layout);
  check_neighborhoods(neighborhoods, layout, true);
  // Row k of full self-attention over Z*_k only depends on the query at
  // the pivot, so the pivot rows are all that is computed.
  Tensor weights;
  Tensor c = pivot_attention(pos_features, params.w_c, neighborhood_mask(layout, neighborhoods), layout,
                             trace ? &weights : nullptr);
  fill_trace(trace, weights, neighborhoods, layout);
  c = maybe_dropout(c, params.config.dropout, dropout_rng);
  return params.joint_ffn(c);
}

EncodedVideo encode(const FeatureSequence& seq, const MultiScaleLayout& layout, const EncoderParams& params,
                    const EncodeOptions& options) {
  const EncoderConfig& cfg = params.config;
  if (seq.dim != cfg.input_dim) {
    throw DimensionError("features have dim " + std::to_string(seq.dim) + ", encoder expects " +
                         std::to_string(cfg.input_dim));
  }
  if (layout.widths != cfg.widths || layout.stride != cfg.stride || layout.original_length != seq.frames) {
    throw PreconditionError("layout was not planned for this video and encoder configuration");
  }

  const std::size_t n_scales = cfg.mode == EncoderMode::single ? 1 : layout.num_scales();
  std::vector<Tensor> projected;
  projected.reserve(n_scales);
  for (std::size_t i = 0; i < n_scales; ++i) {
    projected.push_back(params.input_proj(segment_feature_matrix(seq, layout, i)));
  }
  const std::vector<Tensor> pos = shared_positional_encode(projected, params);

  EncodedVideo out;
  out.layout = layout;
  AttentionTrace trace;
  AttentionTrace* trace_ptr = options.keep_attention_trace ? &trace : nullptr;
  Rng* rng = options.dropout_rng;
  const Real rate = cfg.dropout;

  switch (cfg.mode) {
    case EncoderMode::single:
      out.memory = intra_scale_aggregate(pos[0], params.intra.at(0), rate, rng);
      break;
    case EncoderMode::sequential: {
      std::vector<Neighborhood> nbs;
      for (std::size_t k = 0; k < layout.pivot_count; ++k) nbs.push_back(surrounding_neighborhood(layout, k));
      const Tensor h = inter_scale_aggregate(pos, nbs, layout, params, trace_ptr, rng);
      out.memory = intra_scale_aggregate(h, params.intra.at(0), rate, rng);
      break;
    }
    case EncoderMode::nonrestrictive: {
      if (!params.w_g.defined()) throw PreconditionError("encoder has no inter-scale parameters");
      const auto nbs = all_segment_neighborhoods(layout);
      Tensor weights;
      Tensor c = pivot_attention(pos, params.w_g, AttentionMask::all(layout.pivot_count, layout.total_segments()),
                                 layout, trace_ptr ? &weights : nullptr);
      fill_trace(trace_ptr, weights, nbs, layout);
      c = maybe_dropout(c, rate, rng);
      out.memory = intra_scale_aggregate(params.inter_ffn(c), params.intra.at(0), rate, rng);
      break;
    }
    case EncoderMode::joint: {
      std::vector<Neighborhood> nbs;
      for (std::size_t k = 0; k < layout.pivot_count; ++k) {
        nbs.push_back(extended_surrounding_neighborhood(layout, k));
      }
      out.memory = joint_aggregate(pos, nbs, layout, params, trace_ptr, rng);
      break;
    }
    case EncoderMode::pool: {
      if (params.intra.size() != pos.size()) throw PreconditionError("pool mode needs one encoder per scale");
      std::vector<Tensor> per_scale;
      for (std::size_t i = 0; i < pos.size(); ++i) {
        per_scale.push_back(intra_scale_aggregate(pos[i], params.intra[i], rate, rng));
      }
      out.memory = max_elementwise(per_scale);
      break;
    }
    case EncoderMode::fc: {
      const Tensor h = params.fc_agg(concat_cols(pos));
      out.memory = intra_scale_aggregate(h, params.intra.at(0), rate, rng);
      break;
    }
  }
  if (trace_ptr && !trace.weights.empty()) out.attention_trace = std::move(trace);
  return out;
}

}  // namespace tspnet
