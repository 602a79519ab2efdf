#pragma once

#include "raad/tensor.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace raad {

/// Named parameter tensors, in a fixed order.
using ParameterSet = std::vector<std::pair<std::string, Tensor>>;

struct AdamConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<Buffer> m;
  std::vector<Buffer> v;

  AdamState() = default;
  AdamState(const ParameterSet& params, AdamConfig cfg);
};

/// One bias-corrected Adam update over `params`, then clears their grads.
///
/// Parameters that do not require gradients (frozen networks) are skipped.
/// A trainable parameter without a gradient is a ContractError.
void adam_step(ParameterSet& params, AdamState& state);

}  // namespace raad
