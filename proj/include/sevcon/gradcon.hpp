#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "sevcon/models.hpp"
#include "sevcon/optim.hpp"

namespace sevcon {

/// One flattened weight gradient per parameterized decoder layer.
using LayerGradientSet = std::vector<Tensor>;

/// Running mean of decoder weight gradients seen while training on healthy data.
struct ReferenceGradients {
  std::vector<Tensor> mean;
  std::size_t count = 0;

  bool initialized() const { return count > 0; }
};

/// value = l_recon - alpha * l_grad (higher is more severe).
struct SeverityScore {
  double value = 0.0;
  double l_recon = 0.0;
  double l_grad = 0.0;

  /// The score with the opposite orientation (higher is more normal).
  double normality() const { return -value; }
};

double severity_value(double l_recon, double l_grad, double alpha);

/// Mean squared error over all elements.
double reconstruction_loss(const Tensor& input, const Tensor& reconstruction);
/// d reconstruction_loss / d reconstruction.
Tensor reconstruction_loss_gradient(const Tensor& input, const Tensor& reconstruction);

/// Weight gradients of the decoder's parameterized layers, flattened per layer.
LayerGradientSet decoder_gradients(const Autoencoder& model);

/// Unweighted mean over layers of the cosine between current and reference.
double gradient_alignment(const LayerGradientSet& current, const ReferenceGradients& reference);

/// d gradient_alignment / d current, per layer.
LayerGradientSet gradient_alignment_derivative(const LayerGradientSet& current,
                                               const ReferenceGradients& reference);

/// Cumulative mean: mean += (g - mean) / (count + 1).
void update_reference(ReferenceGradients& reference, const LayerGradientSet& gradients);

struct GradconConfig {
  double alpha = 0.03;
  std::size_t epochs = 25;
  std::size_t batch_size = 64;
  SgdConfig sgd{};
  /// Parameter-space step of the central-difference Hessian-vector product.
  double hvp_step = 1e-4;
  /// Held-out checkpoints per epoch, evenly spaced over its iterations.
  std::size_t heldout_evals = 4;
};

void validate(const GradconConfig& config);

struct GradconStep {
  double l_recon = 0.0;
  std::optional<double> l_grad;  // empty while the constraint is inactive
  LayerGradientSet decoder;      // decoder weight gradients of l_recon
  std::vector<Tensor> total;     // d(l_recon - alpha * l_grad)/d(theta), per parameter
};

/// Gradient of the constrained objective on one batch. Parameter grads are
/// left in an unspecified state; parameter values are restored.
GradconStep gradcon_objective_gradient(Autoencoder& model, const Tensor& batch,
                                       const ReferenceGradients& reference, double alpha,
                                       double hvp_step);

struct GradconEpochLog {
  std::size_t epoch = 0;
  double mean_recon = 0.0;
  double mean_grad = 0.0;  // training batches with an active constraint
  std::optional<double> heldout_recon;  // averaged over the epoch's held-out checkpoints
  std::optional<double> heldout_grad;
};

struct GradconResult {
  Autoencoder model;
  ReferenceGradients reference;
  std::vector<GradconEpochLog> log;
  std::size_t iterations = 0;
};

/// Objective per iteration: L_recon - alpha * gradient_alignment(decoder grads, reference).
/// The alignment term is skipped while the reference is empty; the reference
/// absorbs every iteration's pre-update decoder gradients.
GradconResult train_gradcon(Autoencoder model, std::span<const Tensor> healthy,
                            const GradconConfig& config, std::uint64_t seed,
                            std::span<const Tensor> heldout = {});

/// Scores images against a trained model with a private backward workspace;
/// the source model and reference are never modified.
class SeverityScorer {
 public:
  SeverityScorer(const Autoencoder& model, const ReferenceGradients& reference, double alpha);

  SeverityScore score(const Tensor& image);
  std::vector<SeverityScore> score_all(std::span<const Tensor> images);

 private:
  Autoencoder workspace_;
  const ReferenceGradients& reference_;
  double alpha_;
};

SeverityScore severity_score(const Autoencoder& model, const ReferenceGradients& reference,
                             const Tensor& image, double alpha);

}  // namespace sevcon
