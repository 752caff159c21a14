#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tspnet/random.hpp"
#include "tspnet/tensor.hpp"

namespace tspnet {

using TokenId = std::int32_t;

/// Boolean keep-mask over an attention score matrix (1 = may attend).
struct AttentionMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> keep;

  static AttentionMask all(std::size_t rows, std::size_t cols);
  static AttentionMask causal(std::size_t n);
  bool allowed(std::size_t r, std::size_t c) const { return keep[r * cols + c] != 0; }
  void allow(std::size_t r, std::size_t c) { keep[r * cols + c] = 1; }
};

// Linear algebra. All matrices are rank-2, row-major.
Tensor matmul(const Tensor& a, const Tensor& b);     // a b
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a bᵀ
Tensor transpose(const Tensor& a);

// Elementwise, same shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real factor);
/// a (n×m) plus a bias broadcast over rows; bias has m elements.
Tensor add_bias(const Tensor& a, const Tensor& bias);
/// Elementwise maximum over equally shaped tensors; ties route the
/// gradient to the earliest argument.
Tensor max_elementwise(std::span<const Tensor> parts);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Column means, 1×m.
Tensor mean_rows(const Tensor& a);

/// x·Φ(x) with Φ the standard normal CDF (erf form).
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
/// Inverted dropout. Identity when rate == 0.
Tensor dropout(const Tensor& x, Real rate, Rng& rng);

/// Row-wise softmax, stabilised by subtracting the row max.
Tensor softmax_rows(const Tensor& m);
/// Softmax over the allowed entries of each row; masked entries are exactly
/// zero. Every row must allow at least one entry.
Tensor masked_softmax_rows(const Tensor& m, const AttentionMask& mask);

/// softmax(q kᵀ / √d) v with d = cols(k). Writes the weights to
/// `weights_out` when given.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            Tensor* weights_out = nullptr);
Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const AttentionMask& mask, Tensor* weights_out = nullptr);

/// Row normalisation with learned gain and offset (each m elements).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& offset, Real eps = 1e-5);

// Shape plumbing.
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count);
Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count);
/// Rows of `a` at `indices`, in order (repeats allowed). Doubles as
/// embedding lookup.
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> indices);

struct CrossEntropyOptions {
  TokenId ignore_id = 0;
  /// Uniform label smoothing weight in [0, 1).
  Real label_smoothing = 0;
  /// Sum instead of mean over counted positions.
  bool sum = false;
};

struct LossInfo {
  std::size_t counted = 0;
  /// Set when every target equals ignore_id; the loss is then 0.
  bool all_ignored = false;
};

/// Mean over non-ignored rows of −log softmax(logits)[target].
Tensor cross_entropy(const Tensor& logits, std::span<const TokenId> targets,
                     const CrossEntropyOptions& options = {}, LossInfo* info = nullptr);

}  // namespace tspnet
