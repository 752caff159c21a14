#pragma once

#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tspnet/encoder.hpp"
#include "tspnet/nn.hpp"

namespace tspnet {

struct GradientComparison {
  std::string name;
  std::size_t count = 0;
  double max_rel_err = 0;
  double max_abs_err = 0;
  std::size_t worst_index = 0;
};

struct GradcheckReport {
  std::vector<GradientComparison> parameters;
  double max_rel_err = 0;
  std::string worst_parameter;
  std::size_t checked = 0;
};

/// Relative error |a − n| / max(|a| + |n|, floor). The floor keeps entries
/// whose true gradient is ~0 from reporting round-off as large errors.
inline constexpr double kGradcheckFloor = 1e-6;

/// Compares the tape gradient of `loss` with central differences of step
/// `epsilon` for every element of every tensor in `params`.
GradcheckReport check_gradients(const std::function<Tensor()>& loss, const NamedTensors& params,
                                double epsilon = 1e-5, double floor = kGradcheckFloor);

/// Toy end-to-end check: encoder in `mode`, decoder, cross-entropy.
/// D = D′ = D″ = 16, widths {4, 6, 8}, stride 2, 20 frames, vocabulary of
/// 12 ids, one decoder layer with two heads.
GradcheckReport model_gradcheck(EncoderMode mode, std::uint64_t seed, double epsilon = 1e-5);

nlohmann::json to_json(const GradcheckReport& report);

}  // namespace tspnet
