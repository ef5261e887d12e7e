#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sevcon/models.hpp"
#include "sevcon/optim.hpp"
#include "sevcon/synthdata.hpp"

namespace sevcon {

/// Backbone with a multi-label sigmoid head and an auxiliary softmax head over
/// the label combinations seen in training. The softmax head gives MSP and
/// ODIN a categorical output; the backbone embedding is the feature layer.
struct SupervisedClassifier {
  Backbone backbone;
  ClassifierHead multilabel;
  ClassifierHead combination;
  std::vector<Biomarkers> combinations;  // softmax class -> label combination
};

struct ClassifierConfig {
  std::size_t epochs = 25;
  std::size_t batch_size = 64;
  SgdConfig sgd{};
};

void validate(const ClassifierConfig& config);

/// Joint training of backbone and both heads (sigmoid BCE + softmax CE).
SupervisedClassifier train_supervised_classifier(Backbone backbone, const Dataset& labeled,
                                                 const ClassifierConfig& config,
                                                 std::uint64_t seed);

/// Index of each sample's label combination in `classifier.combinations`.
std::vector<std::size_t> combination_classes(const SupervisedClassifier& classifier,
                                             const Dataset& labeled);

/// Raw [N, 1, S, S] -> [N, D] penultimate features.
Tensor classifier_features(const SupervisedClassifier& classifier, const Tensor& batch);
/// Raw [N, 1, S, S] -> [N, K] softmax-head logits.
Tensor combination_logits(const SupervisedClassifier& classifier, const Tensor& batch);

/// Max softmax probability, in (0, 1].
double max_softmax(std::span<const double> logits);
/// Anomaly orientation: -max_softmax.
double msp_score(std::span<const double> logits);

/// Temperature-scaled input perturbation. Holds a private workspace so the
/// classifier it was built from is never touched.
class OdinScorer {
 public:
  OdinScorer(const SupervisedClassifier& classifier, double temperature, double epsilon);

  /// x - epsilon * sign(d CE(f(x) / T, predicted class) / dx), no clipping.
  Tensor perturb(const Tensor& image);
  /// -max_softmax(f(perturb(x)) / T).
  double score(const Tensor& image);

 private:
  SupervisedClassifier workspace_;
  double temperature_;
  double epsilon_;
};

double odin_score(const SupervisedClassifier& classifier, const Tensor& image, double temperature,
                  double epsilon);

/// Class means with a tied covariance; `precision` is (covariance + eps I)^-1.
struct GaussianClassStats {
  std::vector<Tensor> means;
  Tensor covariance;  // [D, D], unregularized
  Tensor precision;   // [D, D]
  double epsilon = 1e-3;
};

/// Builds stats from given means and covariance; throws NumericalError if the
/// regularized covariance is not positive definite.
GaussianClassStats make_gaussian_stats(std::vector<Tensor> means, Tensor covariance, double epsilon);

/// Fits per-class means and the pooled within-class covariance of [N, D] features.
GaussianClassStats fit_gaussian_stats(const Tensor& features, std::span<const std::size_t> classes,
                                      double epsilon = 1e-3);

/// min over classes of (f - mu_c)^T precision (f - mu_c).
double mahalanobis_score(const GaussianClassStats& stats, std::span<const double> feature);

}  // namespace sevcon
