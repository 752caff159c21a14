#include "tspnet/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tspnet/errors.hpp"

namespace tspnet {

namespace {

struct CrossCache {
  std::vector<Tensor> keys;
  std::vector<Tensor> values;
};

Tensor multi_head(const Tensor& queries, const Tensor& keys, const Tensor& values, std::size_t heads,
                  const AttentionMask* mask) {
  const std::size_t dim = queries.cols();
  const std::size_t head_dim = dim / heads;
  std::vector<Tensor> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t start = h * head_dim;
    const Tensor q = slice_cols(queries, start, head_dim);
    const Tensor k = slice_cols(keys, start, head_dim);
    const Tensor v = slice_cols(values, start, head_dim);
    outputs.push_back(mask ? masked_attention(q, k, v, *mask) : scaled_dot_attention(q, k, v));
  }
  return heads == 1 ? outputs.front() : concat_cols(outputs);
}

CrossCache project_memory(const Tensor& memory, const DecoderParams& params) {
  if (memory.cols() != params.config.model_dim) {
    throw DimensionError("encoder memory has width " + std::to_string(memory.cols()) + ", decoder expects " +
                         std::to_string(params.config.model_dim));
  }
  CrossCache cache;
  for (const auto& layer : params.layers) {
    cache.keys.push_back(layer.cross_attn.key(memory));
    cache.values.push_back(layer.cross_attn.value(memory));
  }
  return cache;
}

Tensor maybe_dropout(const Tensor& x, Real rate, Rng* rng) {
  return (rng && rate > 0) ? dropout(x, rate, *rng) : x;
}

Tensor run_decoder(const CrossCache& cache, std::span<const TokenId> inputs, const DecoderParams& params,
                   Rng* dropout_rng) {
  const DecoderConfig& cfg = params.config;
  if (inputs.empty() || inputs.front() != kBosId) throw PreconditionError("decoder input must start with <bos>");
  if (inputs.size() > cfg.max_length) {
    throw CapacityError("decoder input of length " + std::to_string(inputs.size()) + " exceeds max_length " +
                        std::to_string(cfg.max_length));
  }
  std::vector<std::size_t> ids(inputs.size());
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    if (inputs[t] < 0 || static_cast<std::size_t>(inputs[t]) >= cfg.vocab_size) {
      throw PreconditionError("token id " + std::to_string(inputs[t]) + " outside vocabulary of " +
                              std::to_string(cfg.vocab_size));
    }
    ids[t] = static_cast<std::size_t>(inputs[t]);
  }
  const std::size_t n = inputs.size();
  Tensor x = add(gather_rows(params.embedding, ids), slice_rows(params.positions, 0, n));
  x = maybe_dropout(x, cfg.dropout, dropout_rng);
  const AttentionMask causal = AttentionMask::causal(n);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const DecoderLayerParams& layer = params.layers[l];
    {
      const Tensor normed = layer.self_norm(x);
      const Tensor attn = multi_head(layer.self_attn.query(normed), layer.self_attn.key(normed),
                                     layer.self_attn.value(normed), cfg.heads, &causal);
      x = add(x, maybe_dropout(layer.self_attn.output(attn), cfg.dropout, dropout_rng));
    }
    {
      const Tensor normed = layer.cross_norm(x);
      const Tensor attn =
          multi_head(layer.cross_attn.query(normed), cache.keys[l], cache.values[l], cfg.heads, nullptr);
      x = add(x, maybe_dropout(layer.cross_attn.output(attn), cfg.dropout, dropout_rng));
    }
    {
      const Tensor normed = layer.ff_norm(x);
      const Tensor ff = layer.ff_outer(relu(layer.ff_inner(normed)));
      x = add(x, maybe_dropout(ff, cfg.dropout, dropout_rng));
    }
  }
  return params.output(params.final_norm(x));
}

// Log-softmax of the last logit row.
std::vector<Real> last_log_probs(const Tensor& logits) {
  const std::size_t v = logits.cols();
  const std::size_t last = logits.rows() - 1;
  std::vector<Real> out(v);
  Real mx = -std::numeric_limits<Real>::infinity();
  for (std::size_t j = 0; j < v; ++j) mx = std::max(mx, logits.at(last, j));
  Real z = 0;
  for (std::size_t j = 0; j < v; ++j) z += std::exp(logits.at(last, j) - mx);
  const Real log_z = std::log(z) + mx;
  for (std::size_t j = 0; j < v; ++j) out[j] = logits.at(last, j) - log_z;
  return out;
}

// Self-attention keys and values of every position consumed so far, per layer.
struct StepState {
  std::vector<Tensor> keys;
  std::vector<Tensor> values;
  std::size_t length = 0;
};

// Feeds one token at position state.length and returns the log-probabilities
// of the next one. Equivalent to the last row of run_decoder on the full prefix.
std::vector<Real> decode_step(const CrossCache& cache, StepState& state, TokenId token, const DecoderParams& params) {
  const DecoderConfig& cfg = params.config;
  if (state.length >= cfg.max_length) throw CapacityError("decoder ran past max_length");
  const std::size_t id = static_cast<std::size_t>(token);
  Tensor x = add(gather_rows(params.embedding, std::span<const std::size_t>(&id, 1)),
                 slice_rows(params.positions, state.length, 1));
  state.keys.resize(params.layers.size());
  state.values.resize(params.layers.size());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const DecoderLayerParams& layer = params.layers[l];
    {
      const Tensor normed = layer.self_norm(x);
      const Tensor k = layer.self_attn.key(normed);
      const Tensor v = layer.self_attn.value(normed);
      if (state.length == 0) {
        state.keys[l] = k;
        state.values[l] = v;
      } else {
        const Tensor ks[] = {state.keys[l], k};
        const Tensor vs[] = {state.values[l], v};
        state.keys[l] = concat_rows(ks);
        state.values[l] = concat_rows(vs);
      }
      const Tensor attn =
          multi_head(layer.self_attn.query(normed), state.keys[l], state.values[l], cfg.heads, nullptr);
      x = add(x, layer.self_attn.output(attn));
    }
    {
      const Tensor normed = layer.cross_norm(x);
      const Tensor attn =
          multi_head(layer.cross_attn.query(normed), cache.keys[l], cache.values[l], cfg.heads, nullptr);
      x = add(x, layer.cross_attn.output(attn));
    }
    {
      const Tensor normed = layer.ff_norm(x);
      x = add(x, layer.ff_outer(relu(layer.ff_inner(normed))));
    }
  }
  ++state.length;
  return last_log_probs(params.output(params.final_norm(x)));
}

bool emittable(TokenId t) { return t != kPadId && t != kBosId; }

Real length_normalised(Real log_prob, std::size_t length, Real alpha) {
  if (alpha == 0 || length == 0) return log_prob;
  return log_prob / std::pow(static_cast<Real>(length), alpha);
}

struct Hypothesis {
  std::vector<TokenId> tokens;  // includes <eos> when finished
  Real log_prob = 0;
};

// Higher score first; equal scores fall back to the lexicographically smaller sequence.
bool better(Real score_a, const std::vector<TokenId>& a, Real score_b, const std::vector<TokenId>& b) {
  if (score_a != score_b) return score_a > score_b;
  return a < b;
}

DecodeResult to_result(const Hypothesis& h, Real alpha) {
  DecodeResult r;
  r.finished = !h.tokens.empty() && h.tokens.back() == kEosId;
  r.tokens.assign(h.tokens.begin(), h.tokens.end() - (r.finished ? 1 : 0));
  r.log_prob = h.log_prob;
  r.score = length_normalised(h.log_prob, h.tokens.size(), alpha);
  return r;
}

}  // namespace

MultiHeadAttentionParams MultiHeadAttentionParams::create(std::size_t dim, Rng& rng) {
  return {Linear::create(dim, dim, rng), Linear::create(dim, dim, rng), Linear::create(dim, dim, rng),
          Linear::create(dim, dim, rng)};
}

void MultiHeadAttentionParams::collect(const std::string& prefix, NamedTensors& out) const {
  query.collect(prefix + ".query", out);
  key.collect(prefix + ".key", out);
  value.collect(prefix + ".value", out);
  output.collect(prefix + ".output", out);
}

DecoderParams DecoderParams::create(const DecoderConfig& config, Rng& rng) {
  if (config.vocab_size <= static_cast<std::size_t>(kEosId)) {
    throw ConfigError("decoder.vocab_size", "vocabulary must include the special tokens");
  }
  if (config.model_dim == 0 || config.heads == 0 || config.model_dim % config.heads != 0) {
    throw ConfigError("decoder.heads", "model_dim must be a positive multiple of heads");
  }
  if (config.max_length < 2) throw ConfigError("decoder.max_length", "must be at least 2");
  if (config.dropout < 0 || config.dropout >= 1) throw ConfigError("decoder.dropout", "must lie in [0, 1)");
  const std::size_t d = config.model_dim;
  DecoderParams p;
  p.config = config;
  std::vector<Real> emb(config.vocab_size * d);
  for (auto& v : emb) v = static_cast<Real>(rng.normal());
  p.embedding = Tensor::from({config.vocab_size, d}, std::move(emb), true);

  std::vector<Real> pos(config.max_length * d);
  for (std::size_t t = 0; t < config.max_length; ++t) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double angle = static_cast<double>(t) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      pos[t * d + i] = static_cast<Real>(std::sin(angle));
      if (i + 1 < d) pos[t * d + i + 1] = static_cast<Real>(std::cos(angle));
    }
  }
  p.positions = Tensor::from({config.max_length, d}, std::move(pos), true);

  for (std::size_t l = 0; l < config.layers; ++l) {
    DecoderLayerParams layer;
    layer.self_norm = LayerNormParams::create(d);
    layer.cross_norm = LayerNormParams::create(d);
    layer.ff_norm = LayerNormParams::create(d);
    layer.self_attn = MultiHeadAttentionParams::create(d, rng);
    layer.cross_attn = MultiHeadAttentionParams::create(d, rng);
    layer.ff_inner = Linear::create(d, config.inner_dim(), rng);
    layer.ff_outer = Linear::create(config.inner_dim(), d, rng);
    p.layers.push_back(std::move(layer));
  }
  p.final_norm = LayerNormParams::create(d);
  p.output = Linear::create(d, config.vocab_size, rng);
  return p;
}

NamedTensors DecoderParams::named_parameters() const {
  NamedTensors out;
  out.emplace_back("decoder.embedding", embedding);
  out.emplace_back("decoder.positions", positions);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string prefix = "decoder.layer" + std::to_string(l);
    const auto& layer = layers[l];
    layer.self_norm.collect(prefix + ".self_norm", out);
    layer.self_attn.collect(prefix + ".self_attn", out);
    layer.cross_norm.collect(prefix + ".cross_norm", out);
    layer.cross_attn.collect(prefix + ".cross_attn", out);
    layer.ff_norm.collect(prefix + ".ff_norm", out);
    layer.ff_inner.collect(prefix + ".ff_inner", out);
    layer.ff_outer.collect(prefix + ".ff_outer", out);
  }
  final_norm.collect("decoder.final_norm", out);
  output.collect("decoder.output", out);
  return out;
}

Tensor decode_train(const Tensor& memory, std::span<const TokenId> inputs, const DecoderParams& params,
                    Rng* dropout_rng) {
  return run_decoder(project_memory(memory, params), inputs, params, dropout_rng);
}

Real sequence_log_prob(const Tensor& memory, std::span<const TokenId> continuation, const DecoderParams& params) {
  if (continuation.empty()) throw PreconditionError("sequence_log_prob: empty continuation");
  NoGradScope no_grad;
  std::vector<TokenId> inputs{kBosId};
  inputs.insert(inputs.end(), continuation.begin(), continuation.end());
  inputs.pop_back();
  const Tensor logits = decode_train(memory, inputs, params);
  Real total = 0;
  for (std::size_t t = 0; t < continuation.size(); ++t) {
    const Tensor row = slice_rows(logits, t, 1);
    total += last_log_probs(row)[static_cast<std::size_t>(continuation[t])];
  }
  return total;
}

DecodeResult greedy_decode(const Tensor& memory, const DecoderParams& params, std::size_t max_len) {
  if (max_len == 0) throw PreconditionError("greedy_decode: max_len must be positive");
  NoGradScope no_grad;
  const CrossCache cache = project_memory(memory, params);
  const std::size_t limit = std::min(max_len, params.config.max_length - 1);
  Hypothesis h;
  StepState state;
  auto log_probs = decode_step(cache, state, kBosId, params);
  while (h.tokens.size() < limit) {
    // Ranked on the running total, exactly as beam_decode ranks its expansions.
    TokenId best = -1;
    Real best_total = 0;
    for (std::size_t j = 0; j < log_probs.size(); ++j) {
      const auto t = static_cast<TokenId>(j);
      if (!emittable(t)) continue;
      const Real total = h.log_prob + log_probs[j];
      if (best < 0 || total > best_total) {
        best = t;
        best_total = total;
      }
    }
    h.tokens.push_back(best);
    h.log_prob = best_total;
    if (best == kEosId || h.tokens.size() == limit) break;
    log_probs = decode_step(cache, state, best, params);
  }
  return to_result(h, 0);
}

DecodeResult beam_decode(const Tensor& memory, const DecoderParams& params, const BeamOptions& options) {
  if (options.width == 0) throw PreconditionError("beam_decode: width must be positive");
  if (options.max_len == 0) throw PreconditionError("beam_decode: max_len must be positive");
  NoGradScope no_grad;
  const CrossCache cache = project_memory(memory, params);
  const std::size_t limit = std::min(options.max_len, params.config.max_length - 1);
  const Real alpha = options.length_penalty;

  struct Live {
    Hypothesis h;
    StepState state;
    std::vector<Real> next;  // log-probabilities of the following token
  };
  struct Expansion {
    std::size_t parent;
    TokenId token;
    Real log_prob;
    std::vector<TokenId> tokens;
  };

  std::vector<Live> alive(1);
  alive[0].next = decode_step(cache, alive[0].state, kBosId, params);
  std::vector<Hypothesis> finished;
  const Hypothesis* best_finished = nullptr;
  Real best_finished_score = 0;

  for (std::size_t step = 0; step < limit && !alive.empty(); ++step) {
    std::vector<Expansion> candidates;
    for (std::size_t p = 0; p < alive.size(); ++p) {
      for (std::size_t j = 0; j < alive[p].next.size(); ++j) {
        const auto t = static_cast<TokenId>(j);
        if (!emittable(t)) continue;
        candidates.push_back({p, t, alive[p].h.log_prob + alive[p].next[j], {}});
      }
    }
    // Candidates share one length, so raw log-probabilities rank them.
    const std::size_t keep = std::min(options.width, candidates.size());
    for (auto& c : candidates) {
      c.tokens = alive[c.parent].h.tokens;
      c.tokens.push_back(c.token);
    }
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      [](const Expansion& a, const Expansion& b) {
                        return better(a.log_prob, a.tokens, b.log_prob, b.tokens);
                      });
    std::vector<Live> next_alive;
    finished.reserve(finished.size() + keep);
    for (std::size_t i = 0; i < keep; ++i) {
      Expansion& c = candidates[i];
      Hypothesis h{std::move(c.tokens), c.log_prob};
      if (c.token == kEosId) {
        finished.push_back(std::move(h));
        continue;
      }
      Live live{std::move(h), alive[c.parent].state, {}};
      if (step + 1 < limit) live.next = decode_step(cache, live.state, c.token, params);
      next_alive.push_back(std::move(live));
    }
    alive = std::move(next_alive);

    best_finished = nullptr;
    for (const auto& h : finished) {
      const Real s = length_normalised(h.log_prob, h.tokens.size(), alpha);
      if (!best_finished || better(s, h.tokens, best_finished_score, best_finished->tokens)) {
        best_finished = &h;
        best_finished_score = s;
      }
    }
    // Log-probabilities only fall as hypotheses grow, so a live hypothesis
    // can at best reach log_prob / limit^α (or log_prob when α ≤ 0). Once no
    // live hypothesis can beat the best finished one strictly, stop.
    if (best_finished && alpha >= 0) {
      bool can_improve = false;
      for (const auto& live : alive) {
        const Real bound = alpha == 0 ? live.h.log_prob : length_normalised(live.h.log_prob, limit, alpha);
        if (bound >= best_finished_score) can_improve = true;
      }
      if (!can_improve) break;
    }
  }

  if (!finished.empty()) return to_result(*best_finished, alpha);
  const Hypothesis* best = nullptr;
  Real best_score = 0;
  for (const auto& live : alive) {
    const Real s = length_normalised(live.h.log_prob, live.h.tokens.size(), alpha);
    if (!best || better(s, live.h.tokens, best_score, best->tokens)) {
      best = &live.h;
      best_score = s;
    }
  }
  return to_result(*best, alpha);
}

}  // namespace tspnet
