#include "tspnet/adam.hpp"

#include <cmath>

#include "tspnet/errors.hpp"

namespace tspnet {

void adam_update(std::span<Real> params, std::span<const Real> grads, AdamMoments& moments,
                 std::uint64_t step, const AdamOptions& options) {
  if (step == 0) throw PreconditionError("adam_update: step counts from 1");
  if (grads.size() != params.size()) throw DimensionError("adam_update: grads/params size mismatch");
  if (moments.m.empty()) moments.m.assign(params.size(), Real(0));
  if (moments.v.empty()) moments.v.assign(params.size(), Real(0));
  if (moments.m.size() != params.size() || moments.v.size() != params.size()) {
    throw DimensionError("adam_update: moment buffers do not match parameters");
  }
  const Real b1 = options.beta1, b2 = options.beta2;
  const Real c1 = Real(1) - std::pow(b1, static_cast<Real>(step));
  const Real c2 = Real(1) - std::pow(b2, static_cast<Real>(step));
  const Real decay = Real(1) - options.lr * options.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Real g = grads[i];
    moments.m[i] = b1 * moments.m[i] + (Real(1) - b1) * g;
    moments.v[i] = b2 * moments.v[i] + (Real(1) - b2) * g * g;
    const Real m_hat = moments.m[i] / c1;
    const Real v_hat = moments.v[i] / c2;
    params[i] = params[i] * decay - options.lr * m_hat / (std::sqrt(v_hat) + options.eps);
  }
}

Adam::Adam(std::vector<Tensor> params, AdamOptions options)
    : params_(std::move(params)), options_(options), moments_(params_.size()) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    moments_[i].m.assign(params_[i].numel(), Real(0));
    moments_[i].v.assign(params_[i].numel(), Real(0));
  }
}

void Adam::step() {
  ++step_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    adam_update(p.data(), p.grad(), moments_[i], step_, options_);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace tspnet
