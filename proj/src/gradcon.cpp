#include "sevcon/gradcon.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace sevcon {

namespace {

void check_reference(const LayerGradientSet& current, const ReferenceGradients& reference) {
  if (!reference.initialized()) throw Error("reference gradients are uninitialized");
  if (current.size() != reference.mean.size()) {
    throw ShapeError("gradient set has " + std::to_string(current.size()) +
                     " layers, reference has " + std::to_string(reference.mean.size()));
  }
  for (std::size_t l = 0; l < current.size(); ++l) {
    if (current[l].size() != reference.mean[l].size()) {
      throw ShapeError("decoder layer " + std::to_string(l) + " gradient size mismatch");
    }
  }
}

Tensor image_batch(const Tensor& image, std::size_t side) {
  if (image.size() != side * side) {
    throw ShapeError("expected a " + std::to_string(side) + "x" + std::to_string(side) +
                     " image, got " + shape_string(image.shape()));
  }
  return image.reshaped({1, 1, side, side});
}

std::vector<Tensor> grads_of(const std::vector<Parameter*>& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto* p : params) out.push_back(p->grad);
  return out;
}

}  // namespace

double severity_value(double l_recon, double l_grad, double alpha) {
  return l_recon - alpha * l_grad;
}

double reconstruction_loss(const Tensor& input, const Tensor& reconstruction) {
  if (input.size() != reconstruction.size()) {
    throw ShapeError("reconstruction_loss: " + shape_string(input.shape()) + " vs " +
                     shape_string(reconstruction.shape()));
  }
  if (input.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double d = input[i] - reconstruction[i];
    s += d * d;
  }
  return s / static_cast<double>(input.size());
}

Tensor reconstruction_loss_gradient(const Tensor& input, const Tensor& reconstruction) {
  if (input.size() != reconstruction.size()) {
    throw ShapeError("reconstruction_loss_gradient: size mismatch");
  }
  Tensor g(reconstruction.shape());
  const double scale = 2.0 / static_cast<double>(input.size());
  for (std::size_t i = 0; i < input.size(); ++i) g[i] = scale * (reconstruction[i] - input[i]);
  return g;
}

LayerGradientSet decoder_gradients(const Autoencoder& model) {
  LayerGradientSet out;
  for (auto idx : model.decoder_weight_layers()) {
    const Parameter* w = model.decoder.layer(idx).weight();
    out.push_back(w->grad.reshaped({w->grad.size()}));
  }
  return out;
}

double gradient_alignment(const LayerGradientSet& current, const ReferenceGradients& reference) {
  check_reference(current, reference);
  if (current.empty()) throw Error("gradient_alignment: no decoder layers");
  double total = 0.0;
  for (std::size_t l = 0; l < current.size(); ++l) {
    total += cosine_similarity(current[l].values(), reference.mean[l].values());
  }
  return total / static_cast<double>(current.size());
}

LayerGradientSet gradient_alignment_derivative(const LayerGradientSet& current,
                                               const ReferenceGradients& reference) {
  check_reference(current, reference);
  const double layers = static_cast<double>(current.size());
  LayerGradientSet out;
  for (std::size_t l = 0; l < current.size(); ++l) {
    const auto g = current[l].values();
    const auto r = reference.mean[l].values();
    Tensor d(current[l].shape());
    const double gn = std::sqrt(dot(g, g));
    const double rn = std::sqrt(dot(r, r));
    if (gn >= 1e-12 && rn >= 1e-12) {
      const double cos = dot(g, r) / (gn * rn);
      for (std::size_t i = 0; i < g.size(); ++i) {
        d[i] = (r[i] / (gn * rn) - cos * g[i] / (gn * gn)) / layers;
      }
    }
    out.push_back(std::move(d));
  }
  return out;
}

void update_reference(ReferenceGradients& reference, const LayerGradientSet& gradients) {
  if (reference.count == 0) {
    reference.mean = gradients;
    reference.count = 1;
    return;
  }
  if (gradients.size() != reference.mean.size()) {
    throw ShapeError("update_reference: layer count mismatch");
  }
  for (std::size_t l = 0; l < gradients.size(); ++l) {
    if (gradients[l].shape() != reference.mean[l].shape()) {
      throw ShapeError("update_reference: layer " + std::to_string(l) + " shape mismatch");
    }
  }
  const double k1 = static_cast<double>(reference.count + 1);
  for (std::size_t l = 0; l < gradients.size(); ++l) {
    auto& m = reference.mean[l];
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += (gradients[l][i] - m[i]) / k1;
  }
  ++reference.count;
}

void validate(const GradconConfig& config) {
  if (!(config.alpha >= 0.0) || !std::isfinite(config.alpha)) {
    throw ConfigError("gradcon alpha must be finite and non-negative");
  }
  if (config.epochs == 0) throw ConfigError("gradcon epochs must be positive");
  if (config.batch_size == 0) throw ConfigError("gradcon batch size must be positive");
  if (!(config.hvp_step > 0.0)) throw ConfigError("gradcon hvp_step must be positive");
  if (config.heldout_evals == 0) throw ConfigError("gradcon heldout_evals must be positive");
  validate(config.sgd);
}

GradconStep gradcon_objective_gradient(Autoencoder& model, const Tensor& batch,
                                       const ReferenceGradients& reference, double alpha,
                                       double hvp_step) {
  const auto dec_layers = model.decoder_weight_layers();
  // Full gradient of L_recon at the current parameters.
  auto full_gradient = [&](double* loss_out) {
    const Tensor recon = model.forward(batch);
    if (loss_out) *loss_out = reconstruction_loss(batch, recon);
    model.backward(reconstruction_loss_gradient(batch, recon));
    return grads_of(model.parameters());
  };

  GradconStep step;
  step.total = full_gradient(&step.l_recon);
  step.decoder = decoder_gradients(model);
  if (!std::isfinite(step.l_recon) || alpha == 0.0 || !reference.initialized()) return step;

  step.l_grad = gradient_alignment(step.decoder, reference);
  // d(alignment)/d(theta) = H[:, decoder weights] v, by central differences
  // of the full gradient along v.
  const LayerGradientSet v = gradient_alignment_derivative(step.decoder, reference);
  double v_norm_sq = 0.0;
  for (const auto& t : v) v_norm_sq += t.squared_norm();
  const double v_norm = std::sqrt(v_norm_sq);
  if (v_norm == 0.0) return step;

  const double h = hvp_step / v_norm;
  std::vector<Tensor> saved;
  for (auto idx : dec_layers) saved.push_back(model.decoder.layer(idx).weight()->value);
  auto shift = [&](double delta) {
    for (std::size_t l = 0; l < dec_layers.size(); ++l) {
      Tensor& w = model.decoder.layer(dec_layers[l]).weight()->value;
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = saved[l][i] + delta * v[l][i];
    }
  };
  shift(h);
  const std::vector<Tensor> plus = full_gradient(nullptr);
  shift(-h);
  const std::vector<Tensor> minus = full_gradient(nullptr);
  for (std::size_t l = 0; l < dec_layers.size(); ++l) {
    model.decoder.layer(dec_layers[l]).weight()->value = saved[l];
  }
  for (std::size_t p = 0; p < step.total.size(); ++p) {
    for (std::size_t i = 0; i < step.total[p].size(); ++i) {
      step.total[p][i] -= alpha * (plus[p][i] - minus[p][i]) / (2.0 * h);
    }
  }
  return step;
}

GradconResult train_gradcon(Autoencoder model, std::span<const Tensor> healthy,
                            const GradconConfig& config, std::uint64_t seed,
                            std::span<const Tensor> heldout) {
  validate(config);
  if (healthy.empty()) throw Error("train_gradcon: healthy dataset is empty");

  GradconResult result;
  SgdState optimizer{config.sgd, {}};
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(healthy.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batches_per_epoch = (healthy.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t evals = std::min(config.heldout_evals, batches_per_epoch);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double recon_sum = 0.0;
    double grad_sum = 0.0;
    std::size_t batches = 0;
    std::size_t constrained = 0;
    double heldout_r = 0.0, heldout_g = 0.0;
    std::size_t checkpoints = 0;

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<Tensor> images;
      for (std::size_t i = start; i < end; ++i) images.push_back(healthy[order[i]]);
      const Tensor batch = to_batch(images);

      GradconStep step = gradcon_objective_gradient(model, batch, result.reference,
                                                    config.alpha, config.hvp_step);
      if (!std::isfinite(step.l_recon)) {
        throw NumericalError("train_gradcon: non-finite reconstruction loss at epoch " +
                             std::to_string(epoch) + ", iteration " +
                             std::to_string(result.iterations));
      }
      if (step.l_grad) {
        grad_sum += *step.l_grad;
        ++constrained;
      }

      update_reference(result.reference, step.decoder);
      std::vector<Parameter*> params = model.parameters();
      for (std::size_t p = 0; p < params.size(); ++p) params[p]->grad = std::move(step.total[p]);
      sgd_step(optimizer, params);

      recon_sum += step.l_recon;
      ++batches;
      ++result.iterations;

      // Checkpoint k sits after iteration ceil(k * batches_per_epoch / evals).
      if (!heldout.empty() &&
          batches * evals / batches_per_epoch > (batches - 1) * evals / batches_per_epoch) {
        SeverityScorer scorer(model, result.reference, config.alpha);
        double r = 0.0, g = 0.0;
        for (const auto& img : heldout) {
          const auto s = scorer.score(img);
          r += s.l_recon;
          g += s.l_grad;
        }
        heldout_r += r / static_cast<double>(heldout.size());
        heldout_g += g / static_cast<double>(heldout.size());
        ++checkpoints;
      }
    }

    GradconEpochLog entry;
    entry.epoch = epoch;
    entry.mean_recon = recon_sum / static_cast<double>(batches);
    entry.mean_grad = constrained ? grad_sum / static_cast<double>(constrained) : 0.0;
    if (checkpoints > 0) {
      entry.heldout_recon = heldout_r / static_cast<double>(checkpoints);
      entry.heldout_grad = heldout_g / static_cast<double>(checkpoints);
    }
    result.log.push_back(entry);
  }

  for (std::size_t i = 0; i < model.encoder.size(); ++i) model.encoder.layer(i).clear_cache();
  for (std::size_t i = 0; i < model.decoder.size(); ++i) model.decoder.layer(i).clear_cache();
  result.model = std::move(model);
  return result;
}

// ---------------------------------------------------------------- scoring

SeverityScorer::SeverityScorer(const Autoencoder& model, const ReferenceGradients& reference,
                               double alpha)
    : workspace_(model), reference_(reference), alpha_(alpha) {
  if (!reference.initialized()) throw Error("severity scoring needs initialized reference gradients");
}

SeverityScore SeverityScorer::score(const Tensor& image) {
  const Tensor x = image_batch(image, workspace_.image_side);
  // Only decoder gradients are needed, so the encoder runs cache-free.
  const Tensor latent = workspace_.encoder.infer(x);
  const Tensor recon = workspace_.decoder.forward(latent);
  SeverityScore s;
  s.l_recon = reconstruction_loss(x, recon);
  workspace_.decoder.backward(reconstruction_loss_gradient(x, recon));
  s.l_grad = gradient_alignment(decoder_gradients(workspace_), reference_);
  s.value = severity_value(s.l_recon, s.l_grad, alpha_);
  if (!std::isfinite(s.value)) throw NumericalError("severity score is not finite");
  return s;
}

std::vector<SeverityScore> SeverityScorer::score_all(std::span<const Tensor> images) {
  std::vector<SeverityScore> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(score(img));
  return out;
}

SeverityScore severity_score(const Autoencoder& model, const ReferenceGradients& reference,
                             const Tensor& image, double alpha) {
  SeverityScorer scorer(model, reference, alpha);
  return scorer.score(image);
}

}  // namespace sevcon
