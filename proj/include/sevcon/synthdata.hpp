#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sevcon/tensor.hpp"

namespace sevcon {

inline constexpr std::size_t kBiomarkerCount = 5;

/// Lesion types; each maps one-to-one onto a synthetic biomarker (bio_a..bio_e).
enum class Lesion : std::uint8_t {
  fluid_blob = 0,
  bright_focus = 1,
  detachment_line = 2,
  thickening = 3,
  epiretinal_band = 4,
};

std::string biomarker_name(std::size_t index);  // "bio_a" .. "bio_e"
std::string to_string(Lesion lesion);

using Biomarkers = std::array<std::uint8_t, kBiomarkerCount>;

struct SynthConfig {
  std::size_t image_side = 32;
  std::size_t layer_count = 4;
  double layer_contrast = 0.25;
  double noise_std = 0.03;
  std::uint64_t seed = 20220606;
};

void validate(const SynthConfig& config);

struct GroundTruth {
  std::uint32_t severity = 0;  // number of injected lesions
  Biomarkers biomarkers{};     // lesion-type presence
};

struct ImageSample {
  std::string id;
  Tensor image;  // [S x S], values in [0, 1]
  std::optional<Biomarkers> biomarkers;
  std::optional<std::uint32_t> severity;
};

struct Dataset {
  std::string name;
  std::vector<ImageSample> samples;

  std::size_t size() const { return samples.size(); }
  std::vector<Tensor> images() const;
};

/// Unlabeled corpus: the training view carries no labels, the ground truth is
/// held separately (index-aligned with `images.samples`).
struct UnlabeledCorpus {
  Dataset images;
  std::vector<GroundTruth> ground_truth;
};

struct LabeledSplits {
  Dataset train;
  std::array<Dataset, kBiomarkerCount> binary_test;  // balanced per biomarker
  Dataset multilabel_test;
};

/// Renders one image from a sample seed and a lesion list. An empty lesion
/// list gives the lesion-free render of the same seed.
Tensor render_image(const SynthConfig& config, std::uint64_t sample_seed,
                    const std::vector<Lesion>& lesions);

Dataset generate_healthy(std::size_t n, const SynthConfig& config,
                         const std::string& name = "healthy");
UnlabeledCorpus generate_unlabeled(std::size_t n, std::uint32_t severity_max,
                                   const SynthConfig& config);
LabeledSplits generate_labeled_splits(std::size_t n_train, std::size_t n_test_per_biomarker,
                                      const SynthConfig& config);

// Dataset directory: manifest.json + images/<id>.img (+ labels.csv when labelled).

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset,
                  const SynthConfig& config, const std::string& config_hash);
Dataset load_dataset(const std::filesystem::path& dir);

/// Ground truth kept apart from the unlabeled manifest.
void save_ground_truth(const std::filesystem::path& dir, const UnlabeledCorpus& corpus);
std::vector<GroundTruth> load_ground_truth(const std::filesystem::path& dir,
                                           const Dataset& images);

void write_image_file(const std::filesystem::path& path, const Tensor& image);
Tensor read_image_file(const std::filesystem::path& path);

}  // namespace sevcon
