#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sevcon/baselines.hpp"
#include "sevcon/contrastive.hpp"
#include "sevcon/evalprobe.hpp"
#include "sevcon/gradcon.hpp"
#include "sevcon/synthdata.hpp"

namespace sevcon {

struct ExperimentConfig {
  std::uint64_t seed = 20220606;

  // [data]
  SynthConfig synth{};
  std::size_t n_healthy = 1000;
  std::size_t n_heldout = 200;
  std::size_t n_unlabeled = 2000;
  std::uint32_t severity_max = 4;
  std::size_t n_train = 1000;
  std::size_t n_test_per_biomarker = 200;

  // [gradcon]
  GradconConfig gradcon{};
  std::size_t latent_dim = 16;

  // [labels]
  std::vector<std::size_t> bins{250, 500, 1000};
  std::size_t report_k = 4;

  // [backbone]
  std::size_t embedding_dim = 64;
  std::size_t base_channels = 8;
  std::size_t projection_hidden = 64;
  std::size_t projection_dim = 32;

  AugmentationPolicy augment{};
  PretrainConfig pretrain{};
  ProbeConfig probe{};

  // [baselines]
  ClassifierConfig classifier{};
  double odin_temperature = 1000.0;
  double odin_epsilon = 0.0014;
  double mahalanobis_epsilon = 1e-3;
  std::size_t ablation_bins = 250;

  ExperimentConfig();
};

void validate(const ExperimentConfig& config);

/// INI text with [sections]; unknown sections or keys are rejected.
/// `overrides` are "section.key=value" assignments applied after the file.
ExperimentConfig parse_config(const std::string& ini_text,
                              const std::vector<std::string>& overrides = {});
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides = {});

/// Canonical INI rendering: every key, fixed order, round-trippable numbers.
std::string to_ini(const ExperimentConfig& config);

/// Hash of the canonical rendering.
std::string config_hash(const ExperimentConfig& config);

// ---------------------------------------------------------------- checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t format_version = kCheckpointVersion;
  std::string kind;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::vector<Tensor> velocity;  // optimizer state, may be empty

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint to_checkpoint(const Autoencoder& model);
Autoencoder autoencoder_from(const Checkpoint& checkpoint);

Checkpoint to_checkpoint(const ReferenceGradients& reference);
ReferenceGradients reference_from(const Checkpoint& checkpoint);

Checkpoint to_checkpoint(const Backbone& backbone);
Backbone backbone_from(const Checkpoint& checkpoint);

Checkpoint to_checkpoint(const ProjectionHead& head);
ProjectionHead projection_head_from(const Checkpoint& checkpoint);

Checkpoint to_checkpoint(const ClassifierHead& head);
ClassifierHead classifier_head_from(const Checkpoint& checkpoint);

Checkpoint to_checkpoint(const SupervisedClassifier& classifier);
SupervisedClassifier supervised_classifier_from(const Checkpoint& checkpoint);

}  // namespace sevcon
