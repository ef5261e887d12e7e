#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "sevcon/contrastive.hpp"
#include "sevcon/synthdata.hpp"
#include "test_support.hpp"

using namespace sevcon;
using namespace sevcon::testing;

namespace {

std::vector<std::size_t> two_view_labels(std::size_t b, std::size_t classes, std::mt19937_64& rng) {
  std::vector<std::size_t> labels(2 * b);
  for (std::size_t i = 0; i < b; ++i) labels[i] = labels[b + i] = rng() % classes;
  return labels;
}

Tensor rotate(const Tensor& z, std::mt19937_64& rng) {
  // A product of random Givens rotations is orthogonal.
  const std::size_t m = z.dim(0), d = z.dim(1);
  Tensor out = z;
  std::uniform_real_distribution<double> angle(0.0, 6.283185307179586);
  for (int r = 0; r < 20; ++r) {
    const std::size_t p = rng() % d;
    const std::size_t q = (p + 1 + rng() % (d - 1)) % d;
    const double c = std::cos(angle(rng)), s = std::sin(angle(rng));
    const double norm = std::hypot(c, s);
    for (std::size_t i = 0; i < m; ++i) {
      const double a = out[i * d + p], b = out[i * d + q];
      out[i * d + p] = (c * a - s * b) / norm;
      out[i * d + q] = (s * a + c * b) / norm;
    }
  }
  return out;
}

std::vector<Tensor> tiny_corpus(std::size_t n) {
  SynthConfig c;
  c.seed = 31;
  return generate_unlabeled(n, 4, c).images.images();
}

}  // namespace

TEST(Augment, DoubleFlipIsIdentity) {
  std::mt19937_64 rng(1);
  const Tensor img = random_tensor({8, 8}, rng, 0.0, 1.0);
  EXPECT_EQ(horizontal_flip(horizontal_flip(img)), img);
  EXPECT_NE(horizontal_flip(img), img);
}

TEST(Augment, ShapeAndDeterminism) {
  std::mt19937_64 src(2);
  const Tensor img = random_tensor({32, 32}, src, 0.0, 1.0);
  AugmentationPolicy policy;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    std::mt19937_64 a(seed), b(seed);
    const Tensor x = augment(policy, img, a);
    EXPECT_EQ(x.shape(), img.shape());
    EXPECT_TRUE(x.all_finite());
    EXPECT_EQ(x, augment(policy, img, b));
  }
}

TEST(Augment, FullCropIsIdentity) {
  std::mt19937_64 rng(3);
  const Tensor img = random_tensor({16, 16}, rng, 0.0, 1.0);
  const Tensor c = resized_crop(img, 0.0, 0.0, 16.0, 16.0);
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(c[i], img[i], 1e-12);
}

TEST(Augment, RejectsBadPolicy) {
  AugmentationPolicy p;
  p.crop_scale_min = 0.0;
  EXPECT_THROW(validate(p), ConfigError);
  p = AugmentationPolicy{};
  p.flip_probability = 1.5;
  EXPECT_THROW(validate(p), ConfigError);
}

TEST(Multiview, TwoViewsInheritLabels) {
  const auto images = tiny_corpus(6);
  const std::vector<std::size_t> labels{4, 1, 4, 0, 2, 3};
  const std::vector<std::size_t> sources{0, 2, 5};
  std::mt19937_64 rng(4);
  const MultiviewBatch b = make_multiview_batch(images, labels, sources, AugmentationPolicy{}, rng);
  EXPECT_EQ(b.views.shape(), (Shape{6, 1, 32, 32}));
  EXPECT_EQ(b.labels, (std::vector<std::size_t>{4, 4, 3, 4, 4, 3}));
  EXPECT_EQ(b.source_ids, (std::vector<std::size_t>{0, 2, 5, 0, 2, 5}));
}

TEST(SupCon, PairWithSameLabelIsZero) {
  std::mt19937_64 rng(5);
  const Tensor z = random_unit_rows(2, 3, rng);
  const std::vector<std::size_t> labels{7, 7};
  for (double tau : {0.07, 0.5, 1.0}) EXPECT_NEAR(supcon_loss(z, labels, tau).loss, 0.0, 1e-12);
}

TEST(SupCon, HandCase) {
  const Tensor z({4, 2}, {1, 0, 1, 0, 0, 1, 0, 1});
  const std::vector<std::size_t> labels{0, 0, 1, 1};
  const double expected = std::log(std::exp(1.0) + 2.0) - 1.0;
  EXPECT_NEAR(supcon_loss(z, labels, 1.0).loss, expected, 1e-12);
  EXPECT_NEAR(expected, 0.55144, 1e-5);
}

TEST(SupCon, MatchesBruteForce) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = 1 + rng() % 8;
    const Tensor z = random_unit_rows(2 * b, 5, rng);
    const auto labels = two_view_labels(b, 1 + rng() % 4, rng);
    const double tau = trial % 2 ? 0.07 : 0.5;
    EXPECT_NEAR(supcon_loss(z, labels, tau).loss, brute_force_supcon(z, labels, tau), 1e-9);
  }
}

TEST(SupCon, DistinctLabelsIsInstanceDiscrimination) {
  std::mt19937_64 rng(7);
  const std::size_t b = 6;
  const Tensor z = random_unit_rows(2 * b, 4, rng);
  std::vector<std::size_t> labels(2 * b);
  for (std::size_t i = 0; i < b; ++i) labels[i] = labels[b + i] = i;
  auto sim = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < 4; ++k) s += z[i * 4 + k] * z[j * 4 + k];
    return s / 0.2;
  };
  // NT-Xent written out directly: one positive, the other view.
  double total = 0.0;
  for (std::size_t i = 0; i < 2 * b; ++i) {
    const std::size_t pos = i < b ? i + b : i - b;
    double denom = 0.0;
    for (std::size_t a = 0; a < 2 * b; ++a) {
      if (a != i) denom += std::exp(sim(i, a));
    }
    total -= sim(i, pos) - std::log(denom);
  }
  EXPECT_NEAR(supcon_loss(z, labels, 0.2).loss, total / (2.0 * b), 1e-9);
}

TEST(SupCon, PermutationAndRotationInvariant) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 5;
    const Tensor z = random_unit_rows(2 * b, 6, rng);
    const auto labels = two_view_labels(b, 3, rng);
    const double base = supcon_loss(z, labels, 0.1).loss;

    std::vector<std::size_t> perm(2 * b);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor zp(z.shape());
    std::vector<std::size_t> lp(2 * b);
    for (std::size_t i = 0; i < 2 * b; ++i) {
      for (std::size_t k = 0; k < 6; ++k) zp[i * 6 + k] = z[perm[i] * 6 + k];
      lp[i] = labels[perm[i]];
    }
    EXPECT_NEAR(supcon_loss(zp, lp, 0.1).loss, base, 1e-10);
    EXPECT_NEAR(supcon_loss(rotate(z, rng), labels, 0.1).loss, base, 1e-10);
    EXPECT_GE(base, 0.0);
  }
}

TEST(SupCon, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t b = 2 + trial % 4;
    Tensor z = random_unit_rows(2 * b, 4, rng);
    const auto labels = two_view_labels(b, 2, rng);
    const double tau = trial % 2 ? 0.07 : 1.0;
    const Tensor analytic = supcon_loss(z, labels, tau).gradient;
    const Tensor numeric = numeric_gradient(z, [&] { return brute_force_supcon(z, labels, tau); }, 1e-6);
    EXPECT_LT(relative_error(analytic, numeric), 1e-4) << trial;
  }
}

TEST(SupCon, ChanceLevelAtInitialization) {
  // Uniform random unit embeddings at tau = 1: the mean loss stays near log(2B - 1).
  std::mt19937_64 rng(10);
  const std::size_t b = 16;
  double sum = 0.0;
  const int batches = 200;
  for (int t = 0; t < batches; ++t) {
    std::vector<std::size_t> labels(2 * b);
    for (std::size_t i = 0; i < b; ++i) labels[i] = labels[b + i] = i;
    sum += supcon_loss(random_unit_rows(2 * b, 32, rng), labels, 1.0).loss;
  }
  EXPECT_LE(sum / batches, std::log(2.0 * b - 1.0) + 0.05);
}

TEST(SupCon, Errors) {
  const Tensor z({4, 2}, {1, 0, 1, 0, 0, 1, 0, 1});
  EXPECT_THROW(supcon_loss(z, std::vector<std::size_t>{0, 1, 2, 2}, 1.0), Error);
  EXPECT_THROW(supcon_loss(z, std::vector<std::size_t>{0, 0, 1, 1}, 0.0), Error);
  const Tensor bad({2, 2}, {1, 0, 0, 1.001});
  EXPECT_THROW(supcon_loss(bad, std::vector<std::size_t>{0, 0}, 1.0), NumericalError);
}

TEST(Pretrain, ZeroLearningRateLeavesBackbone) {
  const auto images = tiny_corpus(12);
  std::vector<std::size_t> labels(12);
  for (std::size_t i = 0; i < 12; ++i) labels[i] = i % 3;
  PretrainConfig config;
  config.epochs = 1;
  config.batch_size = 6;
  config.sgd.learning_rate = 0.0;
  const Backbone b = build_backbone(BackboneConfig{}, 1);
  const PretrainResult r = pretrain(b, build_projection_head(64, 64, 32, 2), images, labels,
                                    AugmentationPolicy{}, config, 3);
  EXPECT_EQ(parameter_checksum(r.backbone.net), parameter_checksum(b.net));
  EXPECT_EQ(r.epoch_loss.size(), 1u);
}

TEST(Pretrain, LossDecreasesAndIsDeterministic) {
  const auto images = tiny_corpus(64);
  std::vector<std::size_t> labels(64);
  for (std::size_t i = 0; i < 64; ++i) labels[i] = i % 8;
  PretrainConfig config;
  config.epochs = 4;
  config.batch_size = 32;
  config.sgd.learning_rate = 0.01;
  auto run = [&] {
    return pretrain(build_backbone(BackboneConfig{}, 1), build_projection_head(64, 64, 32, 2),
                    images, labels, AugmentationPolicy{}, config, 3);
  };
  const PretrainResult a = run();
  const PretrainResult b = run();
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
  EXPECT_EQ(parameter_checksum(a.backbone.net), parameter_checksum(b.backbone.net));
  EXPECT_LT(a.epoch_loss.back(), a.epoch_loss.front());
}

TEST(Pretrain, SimclrEqualsUniqueLabels) {
  const auto images = tiny_corpus(16);
  std::vector<std::size_t> labels(16);
  std::iota(labels.begin(), labels.end(), std::size_t{100});
  PretrainConfig config;
  config.epochs = 1;
  config.batch_size = 8;
  const auto a = pretrain(build_backbone(BackboneConfig{}, 1), build_projection_head(64, 64, 32, 2),
                          images, labels, AugmentationPolicy{}, config, 3);
  const auto b = simclr_mode(build_backbone(BackboneConfig{}, 1),
                             build_projection_head(64, 64, 32, 2), images, AugmentationPolicy{},
                             config, 3);
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
  EXPECT_EQ(parameter_checksum(a.backbone.net), parameter_checksum(b.backbone.net));
}

// End-to-end gradient through normalization, projection head and backbone.
TEST(Pretrain, BackboneGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  BackboneConfig bc;
  bc.embedding_dim = 6;
  bc.base_channels = 2;
  Backbone backbone = build_backbone(bc, 4);
  ProjectionHead head = build_projection_head(6, 5, 4, 5);
  const Tensor x = random_tensor({4, 1, 32, 32}, rng, 0.0, 1.0);
  const std::vector<std::size_t> labels{0, 1, 0, 1};
  auto loss = [&] {
    const Tensor u = head.net.infer(backbone.net.infer(normalize_input(bc, x)));
    return supcon_loss(l2_normalize_rows(u), labels, 0.5).loss;
  };
  const Tensor r = backbone.net.forward(normalize_input(bc, x));
  const Tensor u = head.net.forward(r);
  const SupConResult s = supcon_loss(l2_normalize_rows(u), labels, 0.5);
  backbone.net.backward(head.net.backward(l2_normalize_rows_backward(u, s.gradient)));
  for (auto* p : backbone.net.parameters()) {
    const Tensor analytic = p->grad;
    EXPECT_LT(relative_error(analytic, numeric_gradient(p->value, loss, 1e-6)), 1e-4);
  }
}
