#include "sevcon/network.hpp"

#include <cstring>

namespace sevcon {

Sequential::Sequential(const Sequential& other) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
  if (this != &other) {
    Sequential copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Tensor Sequential::forward(const Tensor& input) {
  Tensor x = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    try {
      x = layers_[i]->forward(x);
    } catch (const ShapeError& e) {
      throw ShapeError("layer " + std::to_string(i) + " " + e.what());
    }
  }
  return x;
}

Tensor Sequential::infer(const Tensor& input) const {
  Tensor x = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    try {
      x = layers_[i]->infer(x);
    } catch (const ShapeError& e) {
      throw ShapeError("layer " + std::to_string(i) + " " + e.what());
    }
  }
  return x;
}

Tensor Sequential::backward(const Tensor& grad_output) {
  Tensor g = grad_output;
  for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g);
  return g;
}

std::vector<Parameter*> Sequential::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : layers_) {
    for (auto& p : l->parameters()) out.push_back(&p);
  }
  return out;
}

std::vector<const Parameter*> Sequential::parameters() const {
  std::vector<const Parameter*> out;
  for (const auto& l : layers_) {
    for (const auto& p : std::as_const(*l).parameters()) out.push_back(&p);
  }
  return out;
}

std::size_t Sequential::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->value.size();
  return n;
}

void Sequential::init(std::mt19937_64& rng) {
  for (auto& l : layers_) he_uniform_init(*l, rng);
}

std::uint64_t parameter_checksum(const Sequential& net) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto* p : net.parameters()) {
    for (double v : p->value.values()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

std::vector<double> flatten_parameters(const Sequential& net) {
  std::vector<double> out;
  for (const auto* p : net.parameters()) {
    out.insert(out.end(), p->value.values().begin(), p->value.values().end());
  }
  return out;
}

}  // namespace sevcon
