#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sevcon/metrics.hpp"
#include "sevcon/models.hpp"
#include "sevcon/optim.hpp"
#include "sevcon/synthdata.hpp"

namespace sevcon {

struct ProbeConfig {
  std::size_t epochs = 25;
  std::size_t batch_size = 64;
  SgdConfig sgd{};
};

void validate(const ProbeConfig& config);

/// Frozen-backbone features, [N, embedding_dim].
Tensor extract_features(const Backbone& backbone, const Dataset& data);

/// Biomarker targets: [N, 1] for one biomarker or [N, 5] for all of them.
/// Throws if any sample lacks labels.
Tensor biomarker_targets(const Dataset& data, std::optional<std::size_t> biomarker);

/// Mean binary cross-entropy over all logits and its gradient w.r.t. the logits.
double sigmoid_bce(const Tensor& logits, const Tensor& targets, Tensor* gradient);

double sigmoid(double x);

/// Trains only `head` on precomputed features; the backbone is never touched.
ClassifierHead train_probe_on_features(ClassifierHead head, const Tensor& features,
                                       const Tensor& targets, const ProbeConfig& config,
                                       std::uint64_t seed);

/// Linear probe on a frozen backbone: biomarker index for a binary task,
/// nullopt for the multi-label task.
ClassifierHead train_probe(const Backbone& backbone, ClassifierHead head, const Dataset& train,
                           std::optional<std::size_t> biomarker, const ProbeConfig& config,
                           std::uint64_t seed);

struct BiomarkerResult {
  std::string name;
  double accuracy = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;

  friend bool operator==(const BiomarkerResult&, const BiomarkerResult&) = default;
};

struct ProbeResult {
  std::vector<BiomarkerResult> binary;
  std::vector<double> multilabel_auc;  // per biomarker
  double mean_auc = 0.0;
  std::map<std::string, std::string> provenance;
  std::vector<std::string> warnings;

  friend bool operator==(const ProbeResult&, const ProbeResult&) = default;
};

/// Decision threshold 0.5 on the positive-class probability for binary tasks.
ProbeResult evaluate(const Backbone& backbone,
                     const std::array<ClassifierHead, kBiomarkerCount>& binary_heads,
                     const ClassifierHead& multilabel_head,
                     const std::array<Dataset, kBiomarkerCount>& binary_tests,
                     const Dataset& multilabel_test);

nlohmann::json to_json(const ProbeResult& result);
ProbeResult probe_result_from_json(const nlohmann::json& j);

}  // namespace sevcon
