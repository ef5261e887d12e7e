#include "sevcon/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "sevcon/contrastive.hpp"
#include "sevcon/evalprobe.hpp"
#include "sevcon/util.hpp"

namespace sevcon {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Mean softmax cross-entropy over rows and its gradient w.r.t. the logits.
double softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> targets,
                             Tensor& gradient) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  gradient = Tensor(logits.shape());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
    const double log_z = mx + std::log(sum);
    loss += log_z - row[targets[i]];
    for (std::size_t j = 0; j < k; ++j) {
      gradient[i * k + j] = (std::exp(row[j] - log_z) - (j == targets[i] ? 1.0 : 0.0)) / n;
    }
  }
  return loss / static_cast<double>(n);
}

void clear(Sequential& net) {
  for (std::size_t i = 0; i < net.size(); ++i) net.layer(i).clear_cache();
}

}  // namespace

void validate(const ClassifierConfig& config) {
  if (config.epochs == 0) throw ConfigError("classifier epochs must be positive");
  if (config.batch_size == 0) throw ConfigError("classifier batch size must be positive");
  validate(config.sgd);
}

std::vector<std::size_t> combination_classes(const SupervisedClassifier& classifier,
                                             const Dataset& labeled) {
  std::vector<std::size_t> out;
  out.reserve(labeled.size());
  for (const auto& s : labeled.samples) {
    if (!s.biomarkers) throw ConfigError("sample " + s.id + " has no biomarker labels");
    const auto it = std::find(classifier.combinations.begin(), classifier.combinations.end(),
                              *s.biomarkers);
    if (it == classifier.combinations.end()) {
      throw ConfigError("sample " + s.id + " has a label combination unseen in training");
    }
    out.push_back(static_cast<std::size_t>(it - classifier.combinations.begin()));
  }
  return out;
}

SupervisedClassifier train_supervised_classifier(Backbone backbone, const Dataset& labeled,
                                                 const ClassifierConfig& config,
                                                 std::uint64_t seed) {
  validate(config);
  if (labeled.samples.empty()) throw Error("classifier: labeled set is empty");
  const Tensor targets = biomarker_targets(labeled, std::nullopt);

  std::map<Biomarkers, std::size_t> seen;
  for (const auto& s : labeled.samples) seen.emplace(*s.biomarkers, 0);
  SupervisedClassifier clf;
  for (auto& [combo, index] : seen) {
    index = clf.combinations.size();
    clf.combinations.push_back(combo);
  }
  if (clf.combinations.size() < 2) throw Error("classifier: need at least two label combinations");

  const std::size_t d = backbone.config.embedding_dim;
  clf.multilabel = build_classifier_head(d, kBiomarkerCount, derive_seed(seed, "multilabel-head"));
  clf.combination =
      build_classifier_head(d, clf.combinations.size(), derive_seed(seed, "combination-head"));
  clf.backbone = std::move(backbone);
  const std::vector<std::size_t> classes = combination_classes(clf, labeled);
  const std::vector<Tensor> images = labeled.images();

  SgdState optimizer{config.sgd, {}};
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<Tensor> batch_images;
      Tensor y({end - start, kBiomarkerCount});
      std::vector<std::size_t> c;
      for (std::size_t i = start; i < end; ++i) {
        batch_images.push_back(images[order[i]]);
        std::copy_n(targets.data() + order[i] * kBiomarkerCount, kBiomarkerCount,
                    y.data() + (i - start) * kBiomarkerCount);
        c.push_back(classes[order[i]]);
      }
      const Tensor r =
          clf.backbone.net.forward(normalize_input(clf.backbone.config, to_batch(batch_images)));
      Tensor g_multi, g_combo;
      const double bce = sigmoid_bce(clf.multilabel.net.forward(r), y, &g_multi);
      const double ce = softmax_cross_entropy(clf.combination.net.forward(r), c, g_combo);
      if (!std::isfinite(bce + ce)) {
        throw NumericalError("classifier: non-finite loss at epoch " + std::to_string(epoch));
      }
      Tensor dr = clf.multilabel.net.backward(g_multi);
      const Tensor dr2 = clf.combination.net.backward(g_combo);
      for (std::size_t i = 0; i < dr.size(); ++i) dr[i] += dr2[i];
      clf.backbone.net.backward(dr);

      std::vector<Parameter*> params = clf.backbone.net.parameters();
      for (auto* p : clf.multilabel.net.parameters()) params.push_back(p);
      for (auto* p : clf.combination.net.parameters()) params.push_back(p);
      sgd_step(optimizer, params);
    }
  }
  clear(clf.backbone.net);
  clear(clf.multilabel.net);
  clear(clf.combination.net);
  return clf;
}

Tensor classifier_features(const SupervisedClassifier& classifier, const Tensor& batch) {
  return embed_batch(classifier.backbone, batch);
}

Tensor combination_logits(const SupervisedClassifier& classifier, const Tensor& batch) {
  return classifier.combination.net.infer(classifier_features(classifier, batch));
}

double max_softmax(std::span<const double> logits) {
  if (logits.size() < 2) throw Error("max_softmax: need at least two logits");
  for (double v : logits) {
    if (!std::isfinite(v)) throw NumericalError("max_softmax: non-finite logit");
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  return 1.0 / sum;
}

double msp_score(std::span<const double> logits) { return -max_softmax(logits); }

// ---------------------------------------------------------------- ODIN

OdinScorer::OdinScorer(const SupervisedClassifier& classifier, double temperature, double epsilon)
    : workspace_(classifier), temperature_(temperature), epsilon_(epsilon) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("ODIN temperature must be positive");
  }
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
    throw ConfigError("ODIN epsilon must be non-negative");
  }
}

Tensor OdinScorer::perturb(const Tensor& image) {
  const std::size_t side = workspace_.backbone.config.image_side;
  if (image.size() != side * side) throw ShapeError("odin: image size does not match classifier");
  const Tensor x = image.reshaped({1, 1, side, side});
  const Tensor r = workspace_.backbone.net.forward(normalize_input(workspace_.backbone.config, x));
  const Tensor logits = workspace_.combination.net.forward(r);
  const std::size_t k = logits.size();
  const std::size_t predicted = static_cast<std::size_t>(
      std::max_element(logits.values().begin(), logits.values().end()) - logits.values().begin());

  // d/dlogits of -log softmax(logits / T)[predicted]
  Tensor scaled = logits;
  for (auto& v : scaled.values()) v /= temperature_;
  const double mx = *std::max_element(scaled.values().begin(), scaled.values().end());
  double sum = 0.0;
  for (double v : scaled.values()) sum += std::exp(v - mx);
  Tensor g(logits.shape());
  for (std::size_t j = 0; j < k; ++j) {
    g[j] = (std::exp(scaled[j] - mx) / sum - (j == predicted ? 1.0 : 0.0)) / temperature_;
  }
  const Tensor dx = workspace_.backbone.net.backward(workspace_.combination.net.backward(g));
  clear(workspace_.backbone.net);
  clear(workspace_.combination.net);

  Tensor out = image;
  for (std::size_t i = 0; i < out.size(); ++i) {
    // normalization divides by a positive std, so it does not change the sign
    const double gi = dx[i];
    if (!std::isfinite(gi)) throw NumericalError("odin: non-finite input gradient");
    const double sign = gi > 0.0 ? 1.0 : (gi < 0.0 ? -1.0 : 0.0);
    out[i] = image[i] - epsilon_ * sign;
  }
  return out;
}

double OdinScorer::score(const Tensor& image) {
  const std::size_t side = workspace_.backbone.config.image_side;
  const Tensor x = perturb(image).reshaped({1, 1, side, side});
  Tensor logits = combination_logits(workspace_, x);
  for (auto& v : logits.values()) v /= temperature_;
  return msp_score(logits.values());
}

double odin_score(const SupervisedClassifier& classifier, const Tensor& image, double temperature,
                  double epsilon) {
  OdinScorer scorer(classifier, temperature, epsilon);
  return scorer.score(image);
}

// ---------------------------------------------------------------- Mahalanobis

GaussianClassStats make_gaussian_stats(std::vector<Tensor> means, Tensor covariance, double epsilon) {
  if (means.empty()) throw Error("gaussian stats: no classes");
  if (!(epsilon >= 0.0)) throw ConfigError("mahalanobis epsilon must be non-negative");
  const std::size_t d = means.front().size();
  if (covariance.shape() != Shape{d, d}) throw ShapeError("gaussian stats: covariance must be DxD");
  for (const auto& m : means) {
    if (m.size() != d) throw ShapeError("gaussian stats: class means differ in length");
  }
  const auto n = static_cast<Eigen::Index>(d);
  RowMatrix sigma = Eigen::Map<const RowMatrix>(covariance.data(), n, n);
  sigma.diagonal().array() += epsilon;
  const Eigen::LLT<RowMatrix> llt(sigma);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("mahalanobis: covariance is singular even with epsilon=" +
                         format_double(epsilon) + " on the diagonal; raise the regularization");
  }
  GaussianClassStats stats;
  stats.precision = Tensor({d, d});
  Eigen::Map<RowMatrix>(stats.precision.data(), n, n) = llt.solve(RowMatrix::Identity(n, n));
  if (!stats.precision.all_finite()) {
    throw NumericalError("mahalanobis: non-finite precision with epsilon=" + format_double(epsilon));
  }
  stats.means = std::move(means);
  stats.covariance = std::move(covariance);
  stats.epsilon = epsilon;
  return stats;
}

GaussianClassStats fit_gaussian_stats(const Tensor& features, std::span<const std::size_t> classes,
                                      double epsilon) {
  if (features.rank() != 2) throw ShapeError("fit_gaussian_stats: expected [N, D] features");
  const std::size_t n = features.dim(0), d = features.dim(1);
  if (classes.size() != n) throw ShapeError("fit_gaussian_stats: one class per row required");
  std::map<std::size_t, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < n; ++i) members[classes[i]].push_back(i);

  const auto dd = static_cast<Eigen::Index>(d);
  Eigen::Map<const RowMatrix> f(features.data(), static_cast<Eigen::Index>(n), dd);
  RowMatrix cov = RowMatrix::Zero(dd, dd);
  std::vector<Tensor> means;
  for (const auto& [c, rows] : members) {
    Eigen::RowVectorXd mu = Eigen::RowVectorXd::Zero(dd);
    for (auto i : rows) mu += f.row(static_cast<Eigen::Index>(i));
    mu /= static_cast<double>(rows.size());
    for (auto i : rows) {
      const Eigen::RowVectorXd centered = f.row(static_cast<Eigen::Index>(i)) - mu;
      cov.noalias() += centered.transpose() * centered;
    }
    Tensor m({d});
    Eigen::Map<Eigen::RowVectorXd>(m.data(), dd) = mu;
    means.push_back(std::move(m));
  }
  cov /= static_cast<double>(n);
  Tensor covariance({d, d});
  Eigen::Map<RowMatrix>(covariance.data(), dd, dd) = cov;
  return make_gaussian_stats(std::move(means), std::move(covariance), epsilon);
}

double mahalanobis_score(const GaussianClassStats& stats, std::span<const double> feature) {
  const std::size_t d = stats.means.front().size();
  if (feature.size() != d) throw ShapeError("mahalanobis: feature length mismatch");
  const auto n = static_cast<Eigen::Index>(d);
  Eigen::Map<const RowMatrix> p(stats.precision.data(), n, n);
  Eigen::Map<const Eigen::VectorXd> x(feature.data(), n);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& m : stats.means) {
    const Eigen::VectorXd diff = x - Eigen::Map<const Eigen::VectorXd>(m.data(), n);
    best = std::min(best, diff.dot(p * diff));
  }
  return best;
}

}  // namespace sevcon
