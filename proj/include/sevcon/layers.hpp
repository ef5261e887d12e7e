#pragma once

#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sevcon/tensor.hpp"

namespace sevcon {

enum class LayerKind { dense, conv2d, upsample, relu, sigmoid, flatten, reshape };

std::string to_string(LayerKind kind);

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

/// A differentiable stage operating on batch-major tensors (axis 0 is the batch).
///
/// forward() caches its input for backward(); infer() is the cache-free const
/// path used for evaluation. backward() overwrites every parameter gradient
/// with the gradient of the current upstream signal and returns the gradient
/// with respect to the layer input.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual LayerKind kind() const = 0;
  virtual std::string describe() const = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;

  Tensor forward(const Tensor& input);
  Tensor infer(const Tensor& input) const;
  Tensor backward(const Tensor& grad_output);

  virtual std::span<Parameter> parameters() { return {}; }
  virtual std::span<const Parameter> parameters() const { return {}; }

  /// The weight parameter for layers that have one, else nullptr.
  Parameter* weight();
  const Parameter* weight() const;

  bool has_cache() const { return has_cache_; }
  void clear_cache();

 protected:
  virtual void check_input(const Shape& shape) const = 0;
  virtual Tensor compute(const Tensor& input) const = 0;
  virtual Tensor gradient(const Tensor& input, const Tensor& grad_output) = 0;

  [[noreturn]] void shape_mismatch(const Shape& got, const std::string& expected) const;

 private:
  Tensor cached_input_;
  bool has_cache_ = false;
};

/// y = x Wᵀ + b with W of shape [out, in].
class Dense final : public Layer {
 public:
  Dense(std::size_t in_features, std::size_t out_features, bool bias = true);

  LayerKind kind() const override { return LayerKind::dense; }
  std::string describe() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }
  std::span<Parameter> parameters() override { return params_; }
  std::span<const Parameter> parameters() const override { return params_; }

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

 protected:
  void check_input(const Shape& shape) const override;
  Tensor compute(const Tensor& input) const override;
  Tensor gradient(const Tensor& input, const Tensor& grad_output) override;

 private:
  std::size_t in_;
  std::size_t out_;
  std::vector<Parameter> params_;
};

/// Square-kernel convolution with zero padding kernel/2 on [N, C, H, W] input.
/// stride 2 gives the strided (downsampling) variant.
class Conv2d final : public Layer {
 public:
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         std::size_t stride = 1, bool bias = true);

  LayerKind kind() const override { return LayerKind::conv2d; }
  std::string describe() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }
  std::span<Parameter> parameters() override { return params_; }
  std::span<const Parameter> parameters() const override { return params_; }

  std::size_t output_side(std::size_t input_side) const;

 protected:
  void check_input(const Shape& shape) const override;
  Tensor compute(const Tensor& input) const override;
  Tensor gradient(const Tensor& input, const Tensor& grad_output) override;

 private:
  std::size_t in_ch_;
  std::size_t out_ch_;
  std::size_t kernel_;
  std::size_t stride_;
  std::size_t pad_;
  std::vector<Parameter> params_;
};

/// Nearest-neighbour 2x upsampling of [N, C, H, W].
class Upsample2x final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::upsample; }
  std::string describe() const override { return "upsample2x"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Upsample2x>(*this); }

 protected:
  void check_input(const Shape& shape) const override;
  Tensor compute(const Tensor& input) const override;
  Tensor gradient(const Tensor& input, const Tensor& grad_output) override;
};

class Relu final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::relu; }
  std::string describe() const override { return "relu"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Relu>(*this); }

 protected:
  void check_input(const Shape&) const override {}
  Tensor compute(const Tensor& input) const override;
  Tensor gradient(const Tensor& input, const Tensor& grad_output) override;
};

class Sigmoid final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::sigmoid; }
  std::string describe() const override { return "sigmoid"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Sigmoid>(*this); }

 protected:
  void check_input(const Shape&) const override {}
  Tensor compute(const Tensor& input) const override;
  Tensor gradient(const Tensor& input, const Tensor& grad_output) override;
};

/// [N, ...] -> [N, prod(...)].
class Flatten final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::flatten; }
  std::string describe() const override { return "flatten"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Flatten>(*this); }

 protected:
  void check_input(const Shape& shape) const override;
  Tensor compute(const Tensor& input) const override;
  Tensor gradient(const Tensor& input, const Tensor& grad_output) override;
};

/// [N, prod(target)] -> [N, target...].
class Reshape final : public Layer {
 public:
  explicit Reshape(Shape target);

  LayerKind kind() const override { return LayerKind::reshape; }
  std::string describe() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Reshape>(*this); }

 protected:
  void check_input(const Shape& shape) const override;
  Tensor compute(const Tensor& input) const override;
  Tensor gradient(const Tensor& input, const Tensor& grad_output) override;

 private:
  Shape target_;
};

/// Uniform He (fan-in) initialization of weights; biases are zeroed.
void he_uniform_init(Layer& layer, std::mt19937_64& rng);

}  // namespace sevcon
