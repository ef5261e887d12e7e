#pragma once

#include <cstdint>
#include <vector>

#include "sevcon/network.hpp"

namespace sevcon {

// Images are [S, S] tensors; batches are [N, 1, S, S].
Tensor to_batch(std::span<const Tensor> images);

/// Convolutional autoencoder. The decoder is kept separate so that its
/// parameterized layers can be addressed for gradient extraction.
struct Autoencoder {
  std::size_t image_side = 0;
  std::size_t latent_dim = 0;
  Sequential encoder;
  Sequential decoder;

  Tensor forward(const Tensor& batch);
  Tensor infer(const Tensor& batch) const;
  /// Backpropagates a reconstruction gradient through decoder then encoder.
  Tensor backward(const Tensor& grad_output);

  /// Indices into `decoder` of layers that carry a weight.
  std::vector<std::size_t> decoder_weight_layers() const;
  std::vector<Parameter*> parameters();
};

/// image_side must be 32 or 64; latent_dim at least 4.
Autoencoder build_autoencoder(std::size_t image_side, std::size_t latent_dim, std::uint64_t seed);

struct BackboneConfig {
  std::size_t image_side = 32;
  std::size_t embedding_dim = 64;
  std::size_t base_channels = 8;
  bool bias = true;
  // Pixel statistics used to standardize raw [0, 1] inputs.
  double input_mean = 0.0;
  double input_std = 1.0;
};

/// Small strided-conv encoder standing in for a ResNet trunk.
struct Backbone {
  BackboneConfig config;
  Sequential net;
};

Backbone build_backbone(const BackboneConfig& config, std::uint64_t seed);

/// Image -> flat representation of length embedding_dim.
Tensor embed(const Backbone& backbone, const Tensor& image);
/// Raw [N, 1, S, S] -> [N, embedding_dim] without touching layer caches.
Tensor embed_batch(const Backbone& backbone, const Tensor& batch);

/// MLP with exactly one hidden layer; its outputs are L2-normalized.
struct ProjectionHead {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t output_dim = 0;
  Sequential net;
};

ProjectionHead build_projection_head(std::size_t input_dim, std::size_t hidden_dim,
                                     std::size_t output_dim, std::uint64_t seed,
                                     bool bias = true);

/// Row-wise L2 normalization; throws NumericalError on a (near) zero row.
Tensor l2_normalize_rows(const Tensor& rows);
/// Gradient of row normalization given the pre-normalization rows.
Tensor l2_normalize_rows_backward(const Tensor& rows, const Tensor& grad_normalized);

/// r -> z with ‖z‖ = 1.
Tensor project(const ProjectionHead& head, const Tensor& representation);

/// A single dense layer on top of frozen features.
struct ClassifierHead {
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
  Sequential net;
};

ClassifierHead build_classifier_head(std::size_t input_dim, std::size_t output_dim,
                                     std::uint64_t seed);

}  // namespace sevcon
