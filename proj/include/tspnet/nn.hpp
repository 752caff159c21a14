#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tspnet/ops.hpp"
#include "tspnet/random.hpp"
#include "tspnet/tensor.hpp"

namespace tspnet {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// in×out matrix drawn from U(−1/√in, 1/√in), requiring grad.
Tensor init_weight(std::size_t in, std::size_t out, Rng& rng);

/// y = x W + b, with W stored in×out so rows of x map to rows of y.
struct Linear {
  Tensor weight;
  Tensor bias;  // 1×out, zero-initialised; undefined for bias-free maps

  static Linear create(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, NamedTensors& out) const;
};

/// Two affine maps with GELU in between: W₂·GELU(W₁x + b₁) + b₂.
struct FeedForward {
  Linear inner;
  Linear outer;

  static FeedForward create(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, NamedTensors& out) const;
};

struct LayerNormParams {
  Tensor gain;    // ones
  Tensor offset;  // zeros

  static LayerNormParams create(std::size_t dim);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, offset); }
  void collect(const std::string& prefix, NamedTensors& out) const;
};

}  // namespace tspnet
