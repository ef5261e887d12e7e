#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "sevcon/layers.hpp"

namespace sevcon {

/// Ordered stack of layers with value semantics (copies clone every layer).
class Sequential {
 public:
  Sequential() = default;
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }
  void push_back(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }

  /// Runs every layer, caching activations for backward().
  Tensor forward(const Tensor& input);
  /// Cache-free evaluation; leaves the network untouched.
  Tensor infer(const Tensor& input) const;
  /// Fills every parameter gradient and returns the input gradient.
  Tensor backward(const Tensor& grad_output);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t parameter_count() const;

  void init(std::mt19937_64& rng);

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// FNV-1a over the raw bytes of every parameter value, in layer order.
std::uint64_t parameter_checksum(const Sequential& net);

/// Flattened copy of all parameter values, in layer order.
std::vector<double> flatten_parameters(const Sequential& net);

}  // namespace sevcon
