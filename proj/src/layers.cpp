#include "sevcon/layers.hpp"

#include <Eigen/Core>
#include <cmath>

namespace sevcon {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

Parameter make_parameter(std::string name, Shape shape) {
  Tensor value(shape);
  Tensor grad(std::move(shape));
  return Parameter{std::move(name), std::move(value), std::move(grad)};
}

// Unfolds one [C, H, W] image into a [C*k*k, Ho*Wo] patch matrix.
void im2col(const double* image, std::size_t channels, std::size_t side, std::size_t kernel,
            std::size_t stride, std::size_t pad, std::size_t out_side, double* cols) {
  const std::size_t out_area = out_side * out_side;
  const auto iside = static_cast<std::ptrdiff_t>(side);
  for (std::size_t c = 0; c < channels; ++c) {
    const double* plane = image + c * side * side;
    for (std::size_t ky = 0; ky < kernel; ++ky) {
      for (std::size_t kx = 0; kx < kernel; ++kx) {
        double* row = cols + ((c * kernel + ky) * kernel + kx) * out_area;
        for (std::size_t oy = 0; oy < out_side; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                          static_cast<std::ptrdiff_t>(pad);
          double* dst = row + oy * out_side;
          if (iy < 0 || iy >= iside) {
            std::fill(dst, dst + out_side, 0.0);
            continue;
          }
          for (std::size_t ox = 0; ox < out_side; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                            static_cast<std::ptrdiff_t>(pad);
            dst[ox] = (ix < 0 || ix >= iside) ? 0.0 : plane[iy * iside + ix];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters patch gradients back onto the image.
void col2im(const double* cols, std::size_t channels, std::size_t side, std::size_t kernel,
            std::size_t stride, std::size_t pad, std::size_t out_side, double* image) {
  const std::size_t out_area = out_side * out_side;
  const auto iside = static_cast<std::ptrdiff_t>(side);
  for (std::size_t c = 0; c < channels; ++c) {
    double* plane = image + c * side * side;
    for (std::size_t ky = 0; ky < kernel; ++ky) {
      for (std::size_t kx = 0; kx < kernel; ++kx) {
        const double* row = cols + ((c * kernel + ky) * kernel + kx) * out_area;
        for (std::size_t oy = 0; oy < out_side; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                          static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= iside) continue;
          const double* src = row + oy * out_side;
          for (std::size_t ox = 0; ox < out_side; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                            static_cast<std::ptrdiff_t>(pad);
            if (ix >= 0 && ix < iside) plane[iy * iside + ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::upsample: return "upsample2x";
    case LayerKind::relu: return "relu";
    case LayerKind::sigmoid: return "sigmoid";
    case LayerKind::flatten: return "flatten";
    case LayerKind::reshape: return "reshape";
  }
  return "unknown";
}

Tensor Layer::forward(const Tensor& input) {
  check_input(input.shape());
  Tensor out = compute(input);
  cached_input_ = input;
  has_cache_ = true;
  return out;
}

Tensor Layer::infer(const Tensor& input) const {
  check_input(input.shape());
  return compute(input);
}

Tensor Layer::backward(const Tensor& grad_output) {
  if (!has_cache_) {
    throw Error(describe() + ": backward called before forward");
  }
  return gradient(cached_input_, grad_output);
}

Parameter* Layer::weight() {
  for (auto& p : parameters()) {
    if (p.name == "weight") return &p;
  }
  return nullptr;
}

const Parameter* Layer::weight() const {
  for (const auto& p : parameters()) {
    if (p.name == "weight") return &p;
  }
  return nullptr;
}

void Layer::clear_cache() {
  cached_input_ = Tensor();
  has_cache_ = false;
}

void Layer::shape_mismatch(const Shape& got, const std::string& expected) const {
  throw ShapeError(describe() + ": expected input " + expected + ", got " + shape_string(got));
}

// ---------------------------------------------------------------- Dense

Dense::Dense(std::size_t in_features, std::size_t out_features, bool bias)
    : in_(in_features), out_(out_features) {
  params_.push_back(make_parameter("weight", {out_, in_}));
  if (bias) params_.push_back(make_parameter("bias", {out_}));
}

std::string Dense::describe() const {
  return "dense(" + std::to_string(in_) + "->" + std::to_string(out_) + ")";
}

void Dense::check_input(const Shape& shape) const {
  if (shape.size() != 2 || shape[1] != in_) {
    shape_mismatch(shape, "[N x " + std::to_string(in_) + "]");
  }
}

Tensor Dense::compute(const Tensor& input) const {
  const std::size_t n = input.dim(0);
  Tensor out({n, out_});
  ConstMatrixMap x(input.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in_));
  ConstMatrixMap w(params_[0].value.data(), static_cast<Eigen::Index>(out_),
                   static_cast<Eigen::Index>(in_));
  MatrixMap y(out.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(out_));
  y.noalias() = x * w.transpose();
  if (params_.size() > 1) {
    ConstVectorMap b(params_[1].value.data(), static_cast<Eigen::Index>(out_));
    y.rowwise() += b.transpose();
  }
  return out;
}

Tensor Dense::gradient(const Tensor& input, const Tensor& grad_output) {
  const std::size_t n = input.dim(0);
  if (grad_output.shape() != Shape{n, out_}) {
    throw ShapeError(describe() + ": upstream gradient " + shape_string(grad_output.shape()));
  }
  const auto rows = static_cast<Eigen::Index>(n);
  ConstMatrixMap x(input.data(), rows, static_cast<Eigen::Index>(in_));
  ConstMatrixMap g(grad_output.data(), rows, static_cast<Eigen::Index>(out_));
  ConstMatrixMap w(params_[0].value.data(), static_cast<Eigen::Index>(out_),
                   static_cast<Eigen::Index>(in_));
  MatrixMap dw(params_[0].grad.data(), static_cast<Eigen::Index>(out_),
               static_cast<Eigen::Index>(in_));
  dw.noalias() = g.transpose() * x;
  if (params_.size() > 1) {
    VectorMap db(params_[1].grad.data(), static_cast<Eigen::Index>(out_));
    db = g.colwise().sum().transpose();
  }
  Tensor dx({n, in_});
  MatrixMap dxm(dx.data(), rows, static_cast<Eigen::Index>(in_));
  dxm.noalias() = g * w;
  return dx;
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
               std::size_t stride, bool bias)
    : in_ch_(in_channels), out_ch_(out_channels), kernel_(kernel), stride_(stride),
      pad_(kernel / 2) {
  if (kernel == 0 || stride == 0) throw ShapeError("conv2d: kernel and stride must be positive");
  params_.push_back(make_parameter("weight", {out_ch_, in_ch_, kernel_, kernel_}));
  if (bias) params_.push_back(make_parameter("bias", {out_ch_}));
}

std::string Conv2d::describe() const {
  return "conv2d(" + std::to_string(in_ch_) + "->" + std::to_string(out_ch_) + ", k" +
         std::to_string(kernel_) + ", s" + std::to_string(stride_) + ")";
}

std::size_t Conv2d::output_side(std::size_t input_side) const {
  return (input_side + 2 * pad_ - kernel_) / stride_ + 1;
}

void Conv2d::check_input(const Shape& shape) const {
  if (shape.size() != 4 || shape[1] != in_ch_ || shape[2] != shape[3] ||
      shape[2] + 2 * pad_ < kernel_) {
    shape_mismatch(shape, "[N x " + std::to_string(in_ch_) + " x S x S]");
  }
}

Tensor Conv2d::compute(const Tensor& input) const {
  const std::size_t n = input.dim(0);
  const std::size_t side = input.dim(2);
  const std::size_t out_side = output_side(side);
  const std::size_t out_area = out_side * out_side;
  const std::size_t patch = in_ch_ * kernel_ * kernel_;
  Tensor out({n, out_ch_, out_side, out_side});
  std::vector<double> cols(patch * out_area);
  ConstMatrixMap w(params_[0].value.data(), static_cast<Eigen::Index>(out_ch_),
                   static_cast<Eigen::Index>(patch));
  ConstMatrixMap colm(cols.data(), static_cast<Eigen::Index>(patch),
                      static_cast<Eigen::Index>(out_area));
  for (std::size_t i = 0; i < n; ++i) {
    im2col(input.data() + i * in_ch_ * side * side, in_ch_, side, kernel_, stride_, pad_,
           out_side, cols.data());
    MatrixMap y(out.data() + i * out_ch_ * out_area, static_cast<Eigen::Index>(out_ch_),
                static_cast<Eigen::Index>(out_area));
    y.noalias() = w * colm;
    if (params_.size() > 1) {
      ConstVectorMap b(params_[1].value.data(), static_cast<Eigen::Index>(out_ch_));
      y.colwise() += b;
    }
  }
  return out;
}

Tensor Conv2d::gradient(const Tensor& input, const Tensor& grad_output) {
  const std::size_t n = input.dim(0);
  const std::size_t side = input.dim(2);
  const std::size_t out_side = output_side(side);
  const std::size_t out_area = out_side * out_side;
  const std::size_t patch = in_ch_ * kernel_ * kernel_;
  if (grad_output.shape() != Shape{n, out_ch_, out_side, out_side}) {
    throw ShapeError(describe() + ": upstream gradient " + shape_string(grad_output.shape()));
  }
  std::vector<double> cols(patch * out_area);
  std::vector<double> dcols(patch * out_area);
  const auto rows = static_cast<Eigen::Index>(out_ch_);
  const auto patch_rows = static_cast<Eigen::Index>(patch);
  const auto area = static_cast<Eigen::Index>(out_area);
  ConstMatrixMap w(params_[0].value.data(), rows, patch_rows);
  MatrixMap dw(params_[0].grad.data(), rows, patch_rows);
  dw.setZero();
  const bool has_bias = params_.size() > 1;
  if (has_bias) params_[1].grad.fill(0.0);
  ConstMatrixMap colm(cols.data(), patch_rows, area);
  MatrixMap dcolm(dcols.data(), patch_rows, area);

  Tensor dx(input.shape());
  for (std::size_t i = 0; i < n; ++i) {
    im2col(input.data() + i * in_ch_ * side * side, in_ch_, side, kernel_, stride_, pad_,
           out_side, cols.data());
    ConstMatrixMap g(grad_output.data() + i * out_ch_ * out_area, rows, area);
    dw.noalias() += g * colm.transpose();
    if (has_bias) {
      VectorMap db(params_[1].grad.data(), rows);
      db += g.rowwise().sum();
    }
    dcolm.noalias() = w.transpose() * g;
    col2im(dcols.data(), in_ch_, side, kernel_, stride_, pad_, out_side,
           dx.data() + i * in_ch_ * side * side);
  }
  return dx;
}

// ---------------------------------------------------------------- Upsample2x

void Upsample2x::check_input(const Shape& shape) const {
  if (shape.size() != 4) shape_mismatch(shape, "[N x C x H x W]");
}

Tensor Upsample2x::compute(const Tensor& input) const {
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  Tensor out({n, c, 2 * h, 2 * w});
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = input.data() + p * h * w;
    double* dst = out.data() + p * 4 * h * w;
    for (std::size_t y = 0; y < 2 * h; ++y) {
      for (std::size_t x = 0; x < 2 * w; ++x) dst[y * 2 * w + x] = src[(y / 2) * w + x / 2];
    }
  }
  return out;
}

Tensor Upsample2x::gradient(const Tensor& input, const Tensor& grad_output) {
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (grad_output.shape() != Shape{n, c, 2 * h, 2 * w}) {
    throw ShapeError(describe() + ": upstream gradient " + shape_string(grad_output.shape()));
  }
  Tensor dx(input.shape());
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = grad_output.data() + p * 4 * h * w;
    double* dst = dx.data() + p * h * w;
    for (std::size_t y = 0; y < 2 * h; ++y) {
      for (std::size_t x = 0; x < 2 * w; ++x) dst[(y / 2) * w + x / 2] += src[y * 2 * w + x];
    }
  }
  return dx;
}

// ---------------------------------------------------------------- activations

Tensor Relu::compute(const Tensor& input) const {
  Tensor out = input;
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor Relu::gradient(const Tensor& input, const Tensor& grad_output) {
  if (grad_output.shape() != input.shape()) {
    throw ShapeError("relu: upstream gradient " + shape_string(grad_output.shape()));
  }
  Tensor dx = grad_output;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!(input[i] > 0.0)) dx[i] = 0.0;
  }
  return dx;
}

Tensor Sigmoid::compute(const Tensor& input) const {
  Tensor out = input;
  for (auto& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  return out;
}

Tensor Sigmoid::gradient(const Tensor& input, const Tensor& grad_output) {
  if (grad_output.shape() != input.shape()) {
    throw ShapeError("sigmoid: upstream gradient " + shape_string(grad_output.shape()));
  }
  Tensor dx = grad_output;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-input[i]));
    dx[i] *= s * (1.0 - s);
  }
  return dx;
}

// ---------------------------------------------------------------- reshaping

void Flatten::check_input(const Shape& shape) const {
  if (shape.size() < 2) shape_mismatch(shape, "[N x ...]");
}

Tensor Flatten::compute(const Tensor& input) const {
  return input.reshaped({input.dim(0), input.size() / input.dim(0)});
}

Tensor Flatten::gradient(const Tensor& input, const Tensor& grad_output) {
  return grad_output.reshaped(input.shape());
}

Reshape::Reshape(Shape target) : target_(std::move(target)) {}

std::string Reshape::describe() const { return "reshape" + shape_string(target_); }

void Reshape::check_input(const Shape& shape) const {
  if (shape.size() != 2 || shape[1] != shape_size(target_)) {
    shape_mismatch(shape, "[N x " + std::to_string(shape_size(target_)) + "]");
  }
}

Tensor Reshape::compute(const Tensor& input) const {
  Shape out{input.dim(0)};
  out.insert(out.end(), target_.begin(), target_.end());
  return input.reshaped(std::move(out));
}

Tensor Reshape::gradient(const Tensor& input, const Tensor& grad_output) {
  return grad_output.reshaped(input.shape());
}

// ---------------------------------------------------------------- init

void he_uniform_init(Layer& layer, std::mt19937_64& rng) {
  for (auto& p : layer.parameters()) {
    if (p.name == "bias") {
      p.value.fill(0.0);
      continue;
    }
    const std::size_t fan_in = p.value.size() / p.value.dim(0);
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& v : p.value.values()) v = dist(rng);
  }
}

}  // namespace sevcon
