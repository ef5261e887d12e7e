#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "sevcon/baselines.hpp"
#include "test_support.hpp"

using namespace sevcon;
using namespace sevcon::testing;

namespace {

const SupervisedClassifier& small_classifier() {
  static const SupervisedClassifier clf = [] {
    const LabeledSplits s = generate_labeled_splits(80, 4, SynthConfig{});
    ClassifierConfig config;
    config.epochs = 2;
    config.batch_size = 16;
    config.sgd.learning_rate = 0.01;
    return train_supervised_classifier(build_backbone(BackboneConfig{}, 3), s.train, config, 4);
  }();
  return clf;
}

Tensor identity(std::size_t d) {
  Tensor t({d, d});
  for (std::size_t i = 0; i < d; ++i) t[i * d + i] = 1.0;
  return t;
}

}  // namespace

TEST(Msp, Examples) {
  EXPECT_NEAR(max_softmax(std::vector<double>{0.3, 0.3, 0.3, 0.3}), 0.25, 1e-15);
  const double e2 = std::exp(2.0);
  EXPECT_NEAR(max_softmax(std::vector<double>{2, 0, 0}), e2 / (e2 + 2.0), 1e-15);
  EXPECT_NEAR(max_softmax(std::vector<double>{2, 0, 0}), 0.78698, 1e-5);
  EXPECT_EQ(msp_score(std::vector<double>{2, 0, 0}), -max_softmax(std::vector<double>{2, 0, 0}));
}

TEST(Msp, ShiftInvariantAndInRange) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor l = random_tensor({6}, rng, -10.0, 10.0);
    Tensor shifted = l;
    for (auto& v : shifted.values()) v += 37.5;
    const double m = max_softmax(l.values());
    EXPECT_GT(m, 0.0);
    EXPECT_LE(m, 1.0);
    EXPECT_NEAR(m, max_softmax(shifted.values()), 1e-14);
  }
}

TEST(Msp, Errors) {
  EXPECT_THROW(max_softmax(std::vector<double>{1.0}), Error);
  EXPECT_THROW(max_softmax(std::vector<double>{1.0, std::nan("")}), NumericalError);
}

TEST(Classifier, HeadsAndCombinations) {
  const SupervisedClassifier& clf = small_classifier();
  EXPECT_GE(clf.combinations.size(), 2u);
  EXPECT_EQ(clf.multilabel.output_dim, kBiomarkerCount);
  EXPECT_EQ(clf.combination.output_dim, clf.combinations.size());
  const Tensor x({3, 1, 32, 32}, 0.5);
  EXPECT_EQ(combination_logits(clf, x).shape(), (Shape{3, clf.combinations.size()}));
  EXPECT_EQ(classifier_features(clf, x).shape(), (Shape{3, 64}));
  EXPECT_TRUE(combination_logits(clf, x).all_finite());
}

TEST(Odin, DegenerateParametersBitEqualMsp) {
  const SupervisedClassifier& clf = small_classifier();
  const UnlabeledCorpus c = generate_unlabeled(10, 4, SynthConfig{});
  for (const auto& img : c.images.images()) {
    const double msp = msp_score(combination_logits(clf, img.reshaped({1, 1, 32, 32})).values());
    EXPECT_EQ(odin_score(clf, img, 1.0, 0.0), msp);
  }
}

TEST(Odin, DeterministicAndExactStep) {
  const SupervisedClassifier& clf = small_classifier();
  const Tensor img = generate_unlabeled(1, 4, SynthConfig{}).images.samples[0].image;
  OdinScorer scorer(clf, 1000.0, 0.0014);
  EXPECT_EQ(scorer.score(img), scorer.score(img));
  EXPECT_EQ(scorer.score(img), odin_score(clf, img, 1000.0, 0.0014));
  const Tensor p = scorer.perturb(img);
  double max_diff = 0.0;
  std::size_t moved = 0;
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double d = std::abs(p[i] - img[i]);
    max_diff = std::max(max_diff, d);
    if (d > 0.0) {
      ++moved;
      EXPECT_NEAR(d, 0.0014, 1e-15);
    }
  }
  EXPECT_GT(moved, 0u);
  EXPECT_NEAR(max_diff, 0.0014, 1e-15);
}

TEST(Odin, PerturbationLowersTheLoss) {
  // A small step against the gradient sign should not make the predicted class less likely.
  const SupervisedClassifier& clf = small_classifier();
  const Tensor img = generate_unlabeled(1, 4, SynthConfig{}).images.samples[0].image;
  OdinScorer scorer(clf, 1.0, 1e-4);
  EXPECT_LE(scorer.score(img), odin_score(clf, img, 1.0, 0.0));
}

TEST(Odin, RejectsBadParameters) {
  const SupervisedClassifier& clf = small_classifier();
  EXPECT_THROW(OdinScorer(clf, 0.0, 0.0), ConfigError);
  EXPECT_THROW(OdinScorer(clf, 1.0, -1.0), ConfigError);
}

TEST(Mahalanobis, EuclideanCase) {
  const auto stats = make_gaussian_stats({Tensor::vector({0, 0})}, identity(2), 0.0);
  EXPECT_NEAR(mahalanobis_score(stats, std::vector<double>{3, 4}), 25.0, 1e-12);
}

TEST(Mahalanobis, ZeroAtAClassMean) {
  const auto stats = make_gaussian_stats({Tensor::vector({1, 2}), Tensor::vector({-3, 5})},
                                         Tensor({2, 2}, {2, 0.5, 0.5, 1}), 1e-3);
  EXPECT_EQ(mahalanobis_score(stats, std::vector<double>{-3, 5}), 0.0);
}

TEST(Mahalanobis, IdentityCovarianceIsNearestSquaredDistance) {
  std::mt19937_64 rng(2);
  std::vector<Tensor> means;
  for (int c = 0; c < 4; ++c) means.push_back(random_tensor({5}, rng));
  const auto stats = make_gaussian_stats(means, identity(5), 0.0);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor f = random_tensor({5}, rng, -2.0, 2.0);
    double best = INFINITY;
    for (const auto& m : means) {
      double s = 0.0;
      for (std::size_t k = 0; k < 5; ++k) s += (f[k] - m[k]) * (f[k] - m[k]);
      best = std::min(best, s);
    }
    EXPECT_NEAR(mahalanobis_score(stats, f.values()), best, 1e-12);
  }
}

TEST(Mahalanobis, RotationInvariant) {
  std::mt19937_64 rng(3);
  const std::size_t d = 4;
  Tensor feats = random_tensor({40, d}, rng);
  std::vector<std::size_t> classes(40);
  for (std::size_t i = 0; i < 40; ++i) classes[i] = i % 3;
  const auto stats = fit_gaussian_stats(feats, classes, 1e-3);

  // Orthogonal R from a Givens rotation pair.
  const double a = 0.7, b = -1.3;
  Tensor r = identity(d);
  r[0 * d + 0] = std::cos(a); r[0 * d + 1] = -std::sin(a);
  r[1 * d + 0] = std::sin(a); r[1 * d + 1] = std::cos(a);
  r[2 * d + 2] = std::cos(b); r[2 * d + 3] = -std::sin(b);
  r[3 * d + 2] = std::sin(b); r[3 * d + 3] = std::cos(b);
  auto rot = [&](const Tensor& v) {
    Tensor out({d});
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t k = 0; k < d; ++k) out[i] += r[i * d + k] * v[k];
    }
    return out;
  };
  std::vector<Tensor> means;
  for (const auto& m : stats.means) means.push_back(rot(m));
  Tensor cov({d, d});
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t k = 0; k < d; ++k) {
        for (std::size_t l = 0; l < d; ++l) cov[i * d + j] += r[i * d + k] * stats.covariance[k * d + l] * r[j * d + l];
      }
    }
  }
  const auto rotated = make_gaussian_stats(means, cov, 1e-3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor f = random_tensor({d}, rng);
    EXPECT_NEAR(mahalanobis_score(stats, f.values()), mahalanobis_score(rotated, rot(f).values()), 1e-9);
  }
}

TEST(Mahalanobis, FitMatchesDirectComputation) {
  const Tensor f({4, 2}, {0, 0, 2, 0, 10, 10, 10, 12});
  const std::vector<std::size_t> c{0, 0, 1, 1};
  const auto s = fit_gaussian_stats(f, c, 1e-3);
  ASSERT_EQ(s.means.size(), 2u);
  EXPECT_EQ(s.means[0], Tensor::vector({1, 0}));
  EXPECT_EQ(s.means[1], Tensor::vector({10, 11}));
  // within-class scatter: x-variance from class 0, y-variance from class 1, over N = 4
  EXPECT_DOUBLE_EQ(s.covariance[0], 0.5);
  EXPECT_DOUBLE_EQ(s.covariance[3], 0.5);
  EXPECT_DOUBLE_EQ(s.covariance[1], 0.0);
}

TEST(Mahalanobis, SingularCovarianceNamesEpsilon) {
  try {
    make_gaussian_stats({Tensor::vector({0, 0})}, Tensor({2, 2}, {1, 1, 1, 1}), 0.0);
    FAIL() << "expected a numerical error";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("epsilon"), std::string::npos);
  }
  EXPECT_NO_THROW(make_gaussian_stats({Tensor::vector({0, 0})}, Tensor({2, 2}, {1, 1, 1, 1}), 1e-3));
}
