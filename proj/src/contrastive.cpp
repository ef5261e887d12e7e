#include "sevcon/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <Eigen/Core>

namespace sevcon {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  if (lo == hi) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::size_t square_side(const Tensor& image) {
  if (image.rank() != 2 || image.dim(0) != image.dim(1)) {
    throw ShapeError("expected a square [S x S] image, got " + shape_string(image.shape()));
  }
  return image.dim(0);
}

double sample_bilinear(const Tensor& image, std::size_t side, double x, double y) {
  const double max_coord = static_cast<double>(side - 1);
  x = std::clamp(x, 0.0, max_coord);
  y = std::clamp(y, 0.0, max_coord);
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const std::size_t x1 = std::min(x0 + 1, side - 1);
  const std::size_t y1 = std::min(y0 + 1, side - 1);
  const double fx = x - static_cast<double>(x0);
  const double fy = y - static_cast<double>(y0);
  const double top = image[y0 * side + x0] * (1.0 - fx) + image[y0 * side + x1] * fx;
  const double bottom = image[y1 * side + x0] * (1.0 - fx) + image[y1 * side + x1] * fx;
  return top * (1.0 - fy) + bottom * fy;
}

}  // namespace

void validate(const AugmentationPolicy& p) {
  if (!(p.crop_scale_min > 0.0 && p.crop_scale_min <= p.crop_scale_max && p.crop_scale_max <= 1.0)) {
    throw ConfigError("crop scale range must satisfy 0 < min <= max <= 1");
  }
  if (!(p.crop_ratio_min > 0.0 && p.crop_ratio_min <= p.crop_ratio_max)) {
    throw ConfigError("crop ratio range must satisfy 0 < min <= max");
  }
  if (!(p.flip_probability >= 0.0 && p.flip_probability <= 1.0)) {
    throw ConfigError("flip probability must lie in [0, 1]");
  }
  if (!(p.brightness >= 0.0 && p.brightness < 1.0) || !(p.contrast >= 0.0 && p.contrast < 1.0)) {
    throw ConfigError("jitter factors must lie in [0, 1)");
  }
}

Tensor horizontal_flip(const Tensor& image) {
  const std::size_t side = square_side(image);
  Tensor out(image.shape());
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) out[y * side + x] = image[y * side + (side - 1 - x)];
  }
  return out;
}

Tensor resized_crop(const Tensor& image, double x0, double y0, double width, double height) {
  const std::size_t side = square_side(image);
  if (!(width > 0.0 && height > 0.0)) throw ShapeError("resized_crop: empty crop box");
  Tensor out(image.shape());
  const double sx = width / static_cast<double>(side);
  const double sy = height / static_cast<double>(side);
  for (std::size_t y = 0; y < side; ++y) {
    const double src_y = y0 + (static_cast<double>(y) + 0.5) * sy - 0.5;
    for (std::size_t x = 0; x < side; ++x) {
      const double src_x = x0 + (static_cast<double>(x) + 0.5) * sx - 0.5;
      out[y * side + x] = sample_bilinear(image, side, src_x, src_y);
    }
  }
  return out;
}

Tensor augment(const AugmentationPolicy& policy, const Tensor& image, std::mt19937_64& rng) {
  const std::size_t side = square_side(image);
  const double s = static_cast<double>(side);
  Tensor out = image;

  if (policy.crop) {
    // Same draw order as the usual random-resized-crop: area, log-ratio, then offsets.
    double w = s, h = s, x0 = 0.0, y0 = 0.0;
    for (int attempt = 0; attempt < 10; ++attempt) {
      const double area = s * s * uniform(rng, policy.crop_scale_min, policy.crop_scale_max);
      const double log_ratio =
          uniform(rng, std::log(policy.crop_ratio_min), std::log(policy.crop_ratio_max));
      const double ratio = std::exp(log_ratio);
      const double cw = std::sqrt(area * ratio);
      const double ch = std::sqrt(area / ratio);
      if (cw <= s && ch <= s) {
        w = cw;
        h = ch;
        x0 = uniform(rng, 0.0, s - w);
        y0 = uniform(rng, 0.0, s - h);
        break;
      }
    }
    out = resized_crop(out, x0, y0, w, h);
  }

  if (std::bernoulli_distribution(policy.flip_probability)(rng)) out = horizontal_flip(out);

  if (policy.brightness > 0.0 || policy.contrast > 0.0) {
    const double b = uniform(rng, 1.0 - policy.brightness, 1.0 + policy.brightness);
    const double c = uniform(rng, 1.0 - policy.contrast, 1.0 + policy.contrast);
    for (auto& v : out.values()) v *= b;
    const double mean =
        std::accumulate(out.values().begin(), out.values().end(), 0.0) / static_cast<double>(out.size());
    for (auto& v : out.values()) v = std::clamp((v - mean) * c + mean, 0.0, 1.0);
  }
  return out;
}

MultiviewBatch make_multiview_batch(std::span<const Tensor> images,
                                    std::span<const std::size_t> labels,
                                    std::span<const std::size_t> sources,
                                    const AugmentationPolicy& policy, std::mt19937_64& rng) {
  if (sources.empty()) throw Error("multiview batch needs at least one source");
  if (labels.size() != images.size()) throw ShapeError("multiview batch: label count mismatch");
  const std::size_t b = sources.size();
  std::vector<Tensor> views(2 * b);
  MultiviewBatch batch;
  batch.labels.resize(2 * b);
  batch.source_ids.resize(2 * b);
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t src = sources[i];
    if (src >= images.size()) throw Error("multiview batch: source index out of range");
    views[i] = augment(policy, images[src], rng);
    views[b + i] = augment(policy, images[src], rng);
    batch.labels[i] = batch.labels[b + i] = labels[src];
    batch.source_ids[i] = batch.source_ids[b + i] = src;
  }
  batch.views = to_batch(views);
  return batch;
}

SupConResult supcon_loss(const Tensor& embeddings, std::span<const std::size_t> labels,
                         double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("supcon temperature must be positive");
  if (embeddings.rank() != 2) throw ShapeError("supcon_loss: expected [M x D] embeddings");
  const std::size_t m = embeddings.dim(0);
  const std::size_t d = embeddings.dim(1);
  if (labels.size() != m) throw ShapeError("supcon_loss: label count mismatch");
  if (m < 2) throw Error("supcon_loss: need at least two embeddings");
  for (std::size_t i = 0; i < m; ++i) {
    double sq = 0.0;
    for (std::size_t k = 0; k < d; ++k) sq += embeddings[i * d + k] * embeddings[i * d + k];
    if (std::abs(std::sqrt(sq) - 1.0) > 1e-6) {
      throw NumericalError("supcon_loss: embedding " + std::to_string(i) + " is not unit-norm");
    }
  }

  Eigen::Map<const RowMatrix> z(embeddings.data(), static_cast<Eigen::Index>(m),
                                static_cast<Eigen::Index>(d));
  const RowMatrix logits = (z * z.transpose()) / temperature;
  RowMatrix coeff = RowMatrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));

  double total = 0.0;
  std::vector<double> weights(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    std::size_t positives = 0;
    double max_logit = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i) continue;
      max_logit = std::max(max_logit, logits(ii, static_cast<Eigen::Index>(j)));
      positives += labels[j] == labels[i];
    }
    if (positives == 0) {
      throw Error("supcon_loss: anchor " + std::to_string(i) + " has no positive");
    }
    double denom = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i) continue;
      weights[j] = std::exp(logits(ii, static_cast<Eigen::Index>(j)) - max_logit);
      denom += weights[j];
    }
    const double log_denom = max_logit + std::log(denom);
    const double inv_p = 1.0 / static_cast<double>(positives);
    double anchor = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i) continue;
      const auto jj = static_cast<Eigen::Index>(j);
      const bool positive = labels[j] == labels[i];
      if (positive) anchor -= inv_p * (logits(ii, jj) - log_denom);
      coeff(ii, jj) = weights[j] / denom - (positive ? inv_p : 0.0);
    }
    total += anchor;
  }

  const double scale = 1.0 / (static_cast<double>(m) * temperature);
  SupConResult result;
  result.loss = total / static_cast<double>(m);
  result.gradient = Tensor(embeddings.shape());
  Eigen::Map<RowMatrix> g(result.gradient.data(), static_cast<Eigen::Index>(m),
                          static_cast<Eigen::Index>(d));
  g.noalias() = scale * ((coeff + coeff.transpose()) * z);
  return result;
}

void validate(const PretrainConfig& config) {
  if (!(config.temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (config.batch_size == 0) throw ConfigError("pretrain batch size must be positive");
  if (config.epochs == 0) throw ConfigError("pretrain epochs must be positive");
  validate(config.sgd);
}

Tensor normalize_input(const BackboneConfig& config, const Tensor& batch) {
  Tensor x = batch;
  for (auto& v : x.values()) v = (v - config.input_mean) / config.input_std;
  return x;
}

PretrainResult pretrain(Backbone backbone, ProjectionHead head, std::span<const Tensor> images,
                        std::span<const std::size_t> labels, const AugmentationPolicy& policy,
                        const PretrainConfig& config, std::uint64_t seed) {
  validate(config);
  validate(policy);
  if (images.empty()) throw Error("pretrain: empty dataset");
  if (labels.size() != images.size()) throw ShapeError("pretrain: one label per image required");
  if (head.input_dim != backbone.config.embedding_dim) {
    throw ShapeError("pretrain: projection head input does not match backbone embedding");
  }

  std::map<std::size_t, std::vector<std::size_t>> classes;
  for (std::size_t i = 0; i < labels.size(); ++i) classes[labels[i]].push_back(i);
  if (config.balanced_sampler && classes.size() < 2) {
    throw Error("pretrain: balanced sampler needs at least two classes");
  }

  PretrainResult result;
  SgdState optimizer{config.sgd, {}};
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::size_t> class_keys;
  for (const auto& [k, _] : classes) class_keys.push_back(k);
  const std::size_t steps = (images.size() + config.batch_size - 1) / config.batch_size;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
      std::vector<std::size_t> sources;
      if (config.balanced_sampler) {
        // B/2 distinct classes with (up to) two members each.
        std::vector<std::size_t> keys = class_keys;
        std::shuffle(keys.begin(), keys.end(), rng);
        const std::size_t n_classes = std::min(keys.size(), std::max<std::size_t>(1, config.batch_size / 2));
        for (std::size_t c = 0; c < n_classes; ++c) {
          auto members = classes[keys[c]];
          std::shuffle(members.begin(), members.end(), rng);
          for (std::size_t k = 0; k < std::min<std::size_t>(2, members.size()); ++k) {
            sources.push_back(members[k]);
          }
        }
      } else {
        const std::size_t begin = step * config.batch_size;
        const std::size_t end = std::min(order.size(), begin + config.batch_size);
        sources.assign(order.begin() + static_cast<std::ptrdiff_t>(begin),
                       order.begin() + static_cast<std::ptrdiff_t>(end));
      }

      const MultiviewBatch batch = make_multiview_batch(images, labels, sources, policy, rng);
      const Tensor r = backbone.net.forward(normalize_input(backbone.config, batch.views));
      const Tensor u = head.net.forward(r);
      const Tensor z = l2_normalize_rows(u);
      const SupConResult loss = supcon_loss(z, batch.labels, config.temperature);
      if (!std::isfinite(loss.loss)) {
        throw NumericalError("pretrain: non-finite contrastive loss at epoch " +
                             std::to_string(epoch) + ", step " + std::to_string(step));
      }
      const Tensor du = l2_normalize_rows_backward(u, loss.gradient);
      backbone.net.backward(head.net.backward(du));

      std::vector<Parameter*> params = backbone.net.parameters();
      for (auto* p : head.net.parameters()) params.push_back(p);
      sgd_step(optimizer, params);
      loss_sum += loss.loss;
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(steps));
  }

  for (std::size_t i = 0; i < backbone.net.size(); ++i) backbone.net.layer(i).clear_cache();
  for (std::size_t i = 0; i < head.net.size(); ++i) head.net.layer(i).clear_cache();
  result.backbone = std::move(backbone);
  result.head = std::move(head);
  return result;
}

PretrainResult simclr_mode(Backbone backbone, ProjectionHead head, std::span<const Tensor> images,
                           const AugmentationPolicy& policy, const PretrainConfig& config,
                           std::uint64_t seed) {
  std::vector<std::size_t> labels(images.size());
  std::iota(labels.begin(), labels.end(), std::size_t{0});
  return pretrain(std::move(backbone), std::move(head), images, labels, policy, config, seed);
}

}  // namespace sevcon
