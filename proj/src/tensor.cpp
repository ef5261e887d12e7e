#include "sevcon/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace sevcon {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive: " + shape_string(shape_));
  }
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive: " + shape_string(shape_));
  }
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("shape " + shape_string(shape_) + " does not match " +
                     std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::vector(std::vector<double> values) {
  Shape shape{values.size()};
  return Tensor(std::move(shape), std::move(values));
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice_batch(std::size_t index) const {
  if (shape_.empty() || index >= shape_[0]) {
    throw ShapeError("batch index " + std::to_string(index) + " out of range for " +
                     shape_string(shape_));
  }
  Shape out_shape = shape_;
  out_shape[0] = 1;
  const std::size_t stride = data_.size() / shape_[0];
  std::vector<double> out(data_.begin() + static_cast<std::ptrdiff_t>(index * stride),
                          data_.begin() + static_cast<std::ptrdiff_t>((index + 1) * stride));
  return Tensor(std::move(out_shape), std::move(out));
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor::squared_norm() const { return dot(data_, data_); }

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw ShapeError("cannot stack an empty list");
  const Shape& inner = items.front().shape();
  Shape shape{items.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  std::vector<double> data;
  data.reserve(shape_size(shape));
  for (const auto& t : items) {
    if (t.shape() != inner) {
      throw ShapeError("stack: " + shape_string(t.shape()) + " vs " + shape_string(inner));
    }
    data.insert(data.end(), t.values().begin(), t.values().end());
  }
  return Tensor(std::move(shape), std::move(data));
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine_similarity: length mismatch");
  const double na = std::sqrt(dot(a, a));
  const double nb = std::sqrt(dot(b, b));
  if (na < 1e-12 || nb < 1e-12) return 0.0;
  const double c = dot(a, b) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

}  // namespace sevcon
