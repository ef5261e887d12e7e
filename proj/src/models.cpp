#include "sevcon/models.hpp"

#include <cmath>

namespace sevcon {

Tensor to_batch(std::span<const Tensor> images) {
  if (images.empty()) throw ShapeError("to_batch: no images");
  const Shape& s = images.front().shape();
  if (s.size() != 2 || s[0] != s[1]) {
    throw ShapeError("to_batch: expected square [S x S] images, got " + shape_string(s));
  }
  Tensor batch = stack(images);
  return batch.reshaped({images.size(), 1, s[0], s[1]});
}

// ---------------------------------------------------------------- autoencoder

Tensor Autoencoder::forward(const Tensor& batch) { return decoder.forward(encoder.forward(batch)); }

Tensor Autoencoder::infer(const Tensor& batch) const {
  return decoder.infer(encoder.infer(batch));
}

Tensor Autoencoder::backward(const Tensor& grad_output) {
  return encoder.backward(decoder.backward(grad_output));
}

std::vector<std::size_t> Autoencoder::decoder_weight_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    if (decoder.layer(i).weight() != nullptr) out.push_back(i);
  }
  return out;
}

std::vector<Parameter*> Autoencoder::parameters() {
  auto out = encoder.parameters();
  auto dec = decoder.parameters();
  out.insert(out.end(), dec.begin(), dec.end());
  return out;
}

Autoencoder build_autoencoder(std::size_t image_side, std::size_t latent_dim, std::uint64_t seed) {
  if (image_side != 32 && image_side != 64) {
    throw ConfigError("autoencoder supports image sides 32 and 64, got " +
                      std::to_string(image_side));
  }
  if (latent_dim < 4) throw ConfigError("autoencoder latent_dim must be at least 4");

  Autoencoder ae;
  ae.image_side = image_side;
  ae.latent_dim = latent_dim;
  constexpr std::size_t c1 = 8;
  constexpr std::size_t c2 = 16;
  const std::size_t stages = image_side == 32 ? 2 : 3;
  const std::size_t bottleneck = image_side >> stages;  // 8 for both sizes

  ae.encoder.add<Conv2d>(1, c1, 3, 2);
  ae.encoder.add<Relu>();
  ae.encoder.add<Conv2d>(c1, c2, 3, 2);
  ae.encoder.add<Relu>();
  if (stages == 3) {
    ae.encoder.add<Conv2d>(c2, c2, 3, 2);
    ae.encoder.add<Relu>();
  }
  ae.encoder.add<Flatten>();
  ae.encoder.add<Dense>(c2 * bottleneck * bottleneck, latent_dim);

  ae.decoder.add<Dense>(latent_dim, c2 * bottleneck * bottleneck);
  ae.decoder.add<Relu>();
  ae.decoder.add<Reshape>(Shape{c2, bottleneck, bottleneck});
  if (stages == 3) {
    ae.decoder.add<Upsample2x>();
    ae.decoder.add<Conv2d>(c2, c2, 3, 1);
    ae.decoder.add<Relu>();
  }
  ae.decoder.add<Upsample2x>();
  ae.decoder.add<Conv2d>(c2, c1, 3, 1);
  ae.decoder.add<Relu>();
  ae.decoder.add<Upsample2x>();
  ae.decoder.add<Conv2d>(c1, 1, 3, 1);
  ae.decoder.add<Sigmoid>();

  std::mt19937_64 rng(seed);
  ae.encoder.init(rng);
  ae.decoder.init(rng);
  return ae;
}

// ---------------------------------------------------------------- backbone

Backbone build_backbone(const BackboneConfig& config, std::uint64_t seed) {
  if (config.image_side != 32 && config.image_side != 64) {
    throw ConfigError("backbone supports image sides 32 and 64, got " +
                      std::to_string(config.image_side));
  }
  if (config.embedding_dim == 0 || config.base_channels == 0) {
    throw ConfigError("backbone dimensions must be positive");
  }
  if (!(config.input_std > 0.0)) throw ConfigError("backbone input_std must be positive");
  Backbone b;
  b.config = config;
  std::size_t channels = 1;
  std::size_t width = config.base_channels;
  std::size_t side = config.image_side;
  while (side > 4) {
    b.net.add<Conv2d>(channels, width, 3, 2, config.bias);
    b.net.add<Relu>();
    channels = width;
    width = std::min<std::size_t>(width * 2, 4 * config.base_channels);
    side /= 2;
  }
  b.net.add<Flatten>();
  b.net.add<Dense>(channels * side * side, config.embedding_dim, config.bias);
  b.net.add<Relu>();

  std::mt19937_64 rng(seed);
  b.net.init(rng);
  return b;
}

Tensor embed_batch(const Backbone& backbone, const Tensor& batch) {
  Tensor x = batch;
  for (auto& v : x.values()) v = (v - backbone.config.input_mean) / backbone.config.input_std;
  return backbone.net.infer(x);
}

Tensor embed(const Backbone& backbone, const Tensor& image) {
  const std::size_t s = backbone.config.image_side;
  if (image.shape() != Shape{s, s} && image.shape() != Shape{1, s, s} &&
      image.shape() != Shape{1, 1, s, s}) {
    throw ShapeError("embed: expected a " + std::to_string(s) + "x" + std::to_string(s) +
                     " image, got " + shape_string(image.shape()));
  }
  Tensor out = embed_batch(backbone, image.reshaped({1, 1, s, s}));
  return out.reshaped({backbone.config.embedding_dim});
}

// ---------------------------------------------------------------- projection

ProjectionHead build_projection_head(std::size_t input_dim, std::size_t hidden_dim,
                                     std::size_t output_dim, std::uint64_t seed, bool bias) {
  if (input_dim == 0 || hidden_dim == 0 || output_dim == 0) {
    throw ConfigError("projection head dimensions must be positive");
  }
  ProjectionHead h;
  h.input_dim = input_dim;
  h.hidden_dim = hidden_dim;
  h.output_dim = output_dim;
  h.net.add<Dense>(input_dim, hidden_dim, bias);
  h.net.add<Relu>();
  h.net.add<Dense>(hidden_dim, output_dim, bias);
  std::mt19937_64 rng(seed);
  h.net.init(rng);
  return h;
}

Tensor l2_normalize_rows(const Tensor& rows) {
  if (rows.rank() != 2) throw ShapeError("l2_normalize_rows: expected [N x D]");
  const std::size_t n = rows.dim(0), d = rows.dim(1);
  Tensor out = rows;
  for (std::size_t i = 0; i < n; ++i) {
    double* r = out.data() + i * d;
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) sq += r[j] * r[j];
    const double norm = std::sqrt(sq);
    if (!(norm > 1e-12)) {
      throw NumericalError("cannot normalize a zero projection (row " + std::to_string(i) + ")");
    }
    for (std::size_t j = 0; j < d; ++j) r[j] /= norm;
  }
  return out;
}

Tensor l2_normalize_rows_backward(const Tensor& rows, const Tensor& grad_normalized) {
  if (rows.shape() != grad_normalized.shape() || rows.rank() != 2) {
    throw ShapeError("l2_normalize_rows_backward: shape mismatch");
  }
  const std::size_t n = rows.dim(0), d = rows.dim(1);
  Tensor out(rows.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double* u = rows.data() + i * d;
    const double* g = grad_normalized.data() + i * d;
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) sq += u[j] * u[j];
    const double norm = std::sqrt(sq);
    double zg = 0.0;
    for (std::size_t j = 0; j < d; ++j) zg += (u[j] / norm) * g[j];
    for (std::size_t j = 0; j < d; ++j) out.data()[i * d + j] = (g[j] - (u[j] / norm) * zg) / norm;
  }
  return out;
}

Tensor project(const ProjectionHead& head, const Tensor& representation) {
  if (representation.size() != head.input_dim) {
    throw ShapeError("project: expected representation of length " +
                     std::to_string(head.input_dim) + ", got " +
                     shape_string(representation.shape()));
  }
  Tensor z = head.net.infer(representation.reshaped({1, head.input_dim}));
  return l2_normalize_rows(z).reshaped({head.output_dim});
}

// ---------------------------------------------------------------- classifier

ClassifierHead build_classifier_head(std::size_t input_dim, std::size_t output_dim,
                                     std::uint64_t seed) {
  if (input_dim == 0 || output_dim == 0) throw ConfigError("classifier head dims must be positive");
  ClassifierHead h;
  h.input_dim = input_dim;
  h.output_dim = output_dim;
  h.net.add<Dense>(input_dim, output_dim);
  std::mt19937_64 rng(seed);
  h.net.init(rng);
  return h;
}

}  // namespace sevcon
