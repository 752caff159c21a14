#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tspnet/tensor.hpp"

namespace tspnet {

struct AdamOptions {
  Real lr = Real(1e-4);
  /// Decoupled decay: θ ← θ(1 − lr·wd) ahead of the adaptive step.
  Real weight_decay = Real(1e-4);
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real eps = Real(1e-8);
};

/// First and second moment estimates for one parameter tensor.
struct AdamMoments {
  std::vector<Real> m;
  std::vector<Real> v;
};

/// One bias-corrected Adam step on a flat parameter buffer. `step` counts
/// from 1.
void adam_update(std::span<Real> params, std::span<const Real> grads, AdamMoments& moments,
                 std::uint64_t step, const AdamOptions& options);

/// Adam over a fixed list of parameter tensors, reading their grad buffers.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options);

  void step();
  void zero_grad();

  std::uint64_t steps_taken() const { return step_; }
  void set_steps_taken(std::uint64_t s) { step_ = s; }
  const AdamOptions& options() const { return options_; }
  std::vector<AdamMoments>& moments() { return moments_; }
  const std::vector<AdamMoments>& moments() const { return moments_; }

 private:
  std::vector<Tensor> params_;
  AdamOptions options_;
  std::vector<AdamMoments> moments_;
  std::uint64_t step_ = 0;
};

}  // namespace tspnet
