#pragma once

#include <span>
#include <vector>

#include "sevcon/network.hpp"

namespace sevcon {

struct SgdConfig {
  double learning_rate = 1e-3;
  double momentum = 0.9;
};

/// Classical momentum: v <- momentum*v + g; p <- p - lr*v.
/// Velocity buffers are created on the first step.
struct SgdState {
  SgdConfig config;
  std::vector<Tensor> velocity;
};

void validate(const SgdConfig& config);

void sgd_step(SgdState& state, std::span<Tensor> params, std::span<const Tensor> grads);
void sgd_step(SgdState& state, std::span<Parameter* const> params);

}  // namespace sevcon
