#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "sevcon/models.hpp"
#include "test_support.hpp"

using namespace sevcon;
using sevcon::testing::numeric_gradient;
using sevcon::testing::random_tensor;
using sevcon::testing::relative_error;

TEST(Autoencoder, SeededBuildIsDeterministic) {
  const Autoencoder a = build_autoencoder(32, 16, 7);
  const Autoencoder b = build_autoencoder(32, 16, 7);
  EXPECT_EQ(parameter_checksum(a.encoder), parameter_checksum(b.encoder));
  EXPECT_EQ(parameter_checksum(a.decoder), parameter_checksum(b.decoder));
  EXPECT_EQ(flatten_parameters(a.decoder), flatten_parameters(b.decoder));
  const Autoencoder c = build_autoencoder(32, 16, 8);
  EXPECT_NE(parameter_checksum(a.decoder), parameter_checksum(c.decoder));
}

TEST(Autoencoder, ReconstructionKeepsShape) {
  std::mt19937_64 rng(1);
  for (std::size_t side : {32u, 64u}) {
    Autoencoder ae = build_autoencoder(side, 16, 7);
    const Tensor x = random_tensor({2, 1, side, side}, rng, 0.0, 1.0);
    EXPECT_EQ(ae.forward(x).shape(), x.shape()) << side;
    EXPECT_EQ(ae.infer(x).shape(), x.shape()) << side;
  }
}

TEST(Autoencoder, DecoderHasSeveralWeightLayers) {
  for (std::size_t side : {32u, 64u}) {
    for (std::size_t latent : {4u, 16u, 32u}) {
      EXPECT_GE(build_autoencoder(side, latent, 1).decoder_weight_layers().size(), 2u);
    }
  }
}

TEST(Autoencoder, RejectsUnsupportedConfigs) {
  EXPECT_THROW(build_autoencoder(48, 16, 1), ConfigError);
  EXPECT_THROW(build_autoencoder(32, 3, 1), ConfigError);
}

TEST(Autoencoder, BackwardMatchesFiniteDifferencesOnInput) {
  std::mt19937_64 rng(4);
  Autoencoder ae = build_autoencoder(32, 4, 3);
  Tensor x = random_tensor({1, 1, 32, 32}, rng, 0.0, 1.0);
  const Tensor w = random_tensor({1, 1, 32, 32}, rng);
  auto loss = [&] {
    const Tensor y = ae.infer(x);
    return dot(y.values(), w.values());
  };
  ae.forward(x);
  const Tensor dx = ae.backward(w);
  // Spot-check a handful of pixels rather than all 1024.
  for (std::size_t idx : {0u, 17u, 300u, 511u, 1023u}) {
    const double saved = x[idx];
    x[idx] = saved + 1e-5;
    const double up = loss();
    x[idx] = saved - 1e-5;
    const double down = loss();
    x[idx] = saved;
    const double fd = (up - down) / 2e-5;
    EXPECT_NEAR(dx[idx], fd, 1e-6 + 1e-4 * std::abs(fd)) << idx;
  }
}

TEST(Backbone, EmbeddingLengthAndDeterminism) {
  std::mt19937_64 rng(2);
  const Backbone b = build_backbone(BackboneConfig{}, 5);
  const Tensor img = random_tensor({32, 32}, rng, 0.0, 1.0);
  const Tensor r = embed(b, img);
  EXPECT_EQ(r.size(), 64u);
  EXPECT_EQ(r, embed(b, img));
}

TEST(Backbone, ZeroWeightsGiveZeroEmbedding) {
  BackboneConfig config;
  config.bias = false;
  Backbone b = build_backbone(config, 5);
  for (auto* p : b.net.parameters()) p->value.fill(0.0);
  std::mt19937_64 rng(2);
  const Tensor r = embed(b, random_tensor({32, 32}, rng, 0.0, 1.0));
  for (double v : r.values()) EXPECT_EQ(v, 0.0);
}

TEST(Backbone, ShapeMismatch) {
  const Backbone b = build_backbone(BackboneConfig{}, 5);
  EXPECT_THROW(embed(b, Tensor({16, 16})), ShapeError);
}

TEST(Projection, UnitNormAndLength) {
  std::mt19937_64 rng(8);
  const ProjectionHead head = build_projection_head(64, 64, 32, 3);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor z = project(head, random_tensor({64}, rng));
    EXPECT_EQ(z.size(), 32u);
    EXPECT_NEAR(std::sqrt(z.squared_norm()), 1.0, 1e-9);
  }
}

TEST(Projection, PositiveScaleIsAbsorbedWithoutBias) {
  std::mt19937_64 rng(8);
  const ProjectionHead head = build_projection_head(16, 16, 8, 3, false);
  Tensor r = random_tensor({16}, rng, 0.1, 1.0);
  const Tensor z1 = project(head, r);
  for (auto& v : r.values()) v *= 2.0;
  const Tensor z2 = project(head, r);
  for (std::size_t i = 0; i < z1.size(); ++i) EXPECT_NEAR(z1[i], z2[i], 1e-12);
}

TEST(Projection, DotProductsStayInRange) {
  std::mt19937_64 rng(9);
  const ProjectionHead head = build_projection_head(16, 16, 8, 3);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor a = project(head, random_tensor({16}, rng));
    const Tensor b = project(head, random_tensor({16}, rng));
    const double d = dot(a.values(), b.values());
    EXPECT_LE(d, 1.0 + 1e-12);
    EXPECT_GE(d, -1.0 - 1e-12);
  }
}

TEST(Projection, ZeroRowIsAnError) {
  EXPECT_THROW(l2_normalize_rows(Tensor({2, 3}, {1, 0, 0, 0, 0, 0})), NumericalError);
}

TEST(Projection, NormalizationBackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  Tensor rows = random_tensor({4, 5}, rng);
  const Tensor w = random_tensor({4, 5}, rng);
  auto loss = [&] {
    const Tensor z = l2_normalize_rows(rows);
    return dot(z.values(), w.values());
  };
  const Tensor analytic = l2_normalize_rows_backward(rows, w);
  EXPECT_LT(relative_error(analytic, numeric_gradient(rows, loss)), 1e-6);
}

TEST(Classifier, SingleDenseLayer) {
  const ClassifierHead h = build_classifier_head(64, 5, 1);
  ASSERT_EQ(h.net.size(), 1u);
  EXPECT_EQ(h.net.layer(0).kind(), LayerKind::dense);
  EXPECT_EQ(h.net.infer(Tensor({3, 64})).shape(), (Shape{3, 5}));
}
