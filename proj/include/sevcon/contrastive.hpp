#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "sevcon/models.hpp"
#include "sevcon/optim.hpp"

namespace sevcon {

/// Grayscale augmentation: random resized crop, horizontal flip and
/// brightness/contrast jitter. Input normalization belongs to the backbone.
struct AugmentationPolicy {
  bool crop = true;
  double crop_scale_min = 0.6;  // fraction of image area
  double crop_scale_max = 1.0;
  double crop_ratio_min = 3.0 / 4.0;
  double crop_ratio_max = 4.0 / 3.0;
  double flip_probability = 0.5;
  double brightness = 0.2;  // multiplicative factor drawn from [1-b, 1+b]
  double contrast = 0.2;    // factor drawn from [1-c, 1+c] around the image mean
};

void validate(const AugmentationPolicy& policy);

Tensor horizontal_flip(const Tensor& image);
/// Bilinear resample of the box [x0, x0+w) x [y0, y0+h) back to the full side.
Tensor resized_crop(const Tensor& image, double x0, double y0, double width, double height);
Tensor augment(const AugmentationPolicy& policy, const Tensor& image, std::mt19937_64& rng);

/// Two augmented views per source; views [0, B) are first views, [B, 2B) second views.
struct MultiviewBatch {
  Tensor views;  // [2B, 1, S, S]
  std::vector<std::size_t> labels;
  std::vector<std::size_t> source_ids;
};

MultiviewBatch make_multiview_batch(std::span<const Tensor> images,
                                    std::span<const std::size_t> labels,
                                    std::span<const std::size_t> sources,
                                    const AugmentationPolicy& policy, std::mt19937_64& rng);

struct SupConResult {
  double loss = 0.0;
  Tensor gradient;  // d loss / d embeddings, same shape as the embeddings
};

/// Supervised contrastive loss averaged over anchors. Embeddings are unit-norm
/// rows of [M, D]; for anchor i the candidates are all other rows and the
/// positives are the candidates sharing its label.
SupConResult supcon_loss(const Tensor& embeddings, std::span<const std::size_t> labels,
                         double temperature);

struct PretrainConfig {
  double temperature = 0.07;
  std::size_t batch_size = 64;
  std::size_t epochs = 25;
  SgdConfig sgd{};
  bool balanced_sampler = false;
};

void validate(const PretrainConfig& config);

struct PretrainResult {
  Backbone backbone;
  ProjectionHead head;
  std::vector<double> epoch_loss;
};

/// Normalizes a raw [N, 1, S, S] batch with the backbone's input statistics.
Tensor normalize_input(const BackboneConfig& config, const Tensor& batch);

/// Contrastive pretraining of backbone + projection head on pseudo-labels.
PretrainResult pretrain(Backbone backbone, ProjectionHead head, std::span<const Tensor> images,
                        std::span<const std::size_t> labels, const AugmentationPolicy& policy,
                        const PretrainConfig& config, std::uint64_t seed);

/// Instance discrimination: pretrain with every source as its own class.
PretrainResult simclr_mode(Backbone backbone, ProjectionHead head, std::span<const Tensor> images,
                           const AugmentationPolicy& policy, const PretrainConfig& config,
                           std::uint64_t seed);

}  // namespace sevcon
