#include "tspnet/nn.hpp"

#include <cmath>

namespace tspnet {

Tensor init_weight(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<Real> values(in * out);
  for (auto& v : values) v = static_cast<Real>(rng.uniform(-bound, bound));
  return Tensor::from({in, out}, std::move(values), true);
}

Linear Linear::create(std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
  Linear l;
  l.weight = init_weight(in, out, rng);
  if (with_bias) l.bias = Tensor::zeros({1, out}, true);
  return l;
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add_bias(y, bias) : y;
}

void Linear::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".weight", weight);
  if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
}

FeedForward FeedForward::create(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
  FeedForward f;
  f.inner = Linear::create(in, hidden, rng);
  f.outer = Linear::create(hidden, out, rng);
  return f;
}

Tensor FeedForward::operator()(const Tensor& x) const { return outer(gelu(inner(x))); }

void FeedForward::collect(const std::string& prefix, NamedTensors& out) const {
  inner.collect(prefix + ".inner", out);
  outer.collect(prefix + ".outer", out);
}

LayerNormParams LayerNormParams::create(std::size_t dim) {
  return {Tensor::full({1, dim}, Real(1), true), Tensor::zeros({1, dim}, true)};
}

void LayerNormParams::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".gain", gain);
  out.emplace_back(prefix + ".offset", offset);
}

}  // namespace tspnet
