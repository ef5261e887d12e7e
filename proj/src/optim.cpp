#include "sevcon/optim.hpp"

#include <cmath>

namespace sevcon {

void validate(const SgdConfig& config) {
  if (!(config.learning_rate >= 0.0) || !std::isfinite(config.learning_rate)) {
    throw ConfigError("learning rate must be a finite non-negative number");
  }
  if (!(config.momentum >= 0.0 && config.momentum < 1.0)) {
    throw ConfigError("momentum must lie in [0, 1)");
  }
}

namespace {

void ensure_velocity(SgdState& state, std::size_t count, auto shape_of) {
  if (state.velocity.empty()) {
    state.velocity.reserve(count);
    for (std::size_t i = 0; i < count; ++i) state.velocity.emplace_back(shape_of(i));
  }
  if (state.velocity.size() != count) {
    throw ShapeError("sgd: optimizer tracks " + std::to_string(state.velocity.size()) +
                     " tensors, got " + std::to_string(count));
  }
  for (std::size_t i = 0; i < count; ++i) {
    if (state.velocity[i].shape() != shape_of(i)) {
      throw ShapeError("sgd: velocity " + std::to_string(i) + " has shape " +
                       shape_string(state.velocity[i].shape()));
    }
  }
}

void update(const SgdConfig& config, Tensor& velocity, Tensor& param, const Tensor& grad) {
  if (grad.shape() != param.shape()) {
    throw ShapeError("sgd: gradient " + shape_string(grad.shape()) + " vs parameter " +
                     shape_string(param.shape()));
  }
  for (std::size_t j = 0; j < param.size(); ++j) {
    velocity[j] = config.momentum * velocity[j] + grad[j];
    param[j] -= config.learning_rate * velocity[j];
  }
}

}  // namespace

void sgd_step(SgdState& state, std::span<Tensor> params, std::span<const Tensor> grads) {
  validate(state.config);
  if (params.size() != grads.size()) throw ShapeError("sgd: parameter/gradient count mismatch");
  ensure_velocity(state, params.size(), [&](std::size_t i) { return params[i].shape(); });
  for (std::size_t i = 0; i < params.size(); ++i) {
    update(state.config, state.velocity[i], params[i], grads[i]);
  }
}

void sgd_step(SgdState& state, std::span<Parameter* const> params) {
  validate(state.config);
  ensure_velocity(state, params.size(), [&](std::size_t i) { return params[i]->value.shape(); });
  for (std::size_t i = 0; i < params.size(); ++i) {
    update(state.config, state.velocity[i], params[i]->value, params[i]->grad);
  }
}

}  // namespace sevcon
