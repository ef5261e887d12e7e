#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sevcon/experiment.hpp"

namespace sevcon {

/// The run directory and the configuration every stage is checked against.
///
/// Layout:
///   config.ini                       canonical config of the run
///   data/{healthy,heldout,unlabeled,unlabeled_truth,train,test_*}/
///   gradcon/                         autoencoder.ckpt, reference.ckpt, log.csv, heldout_scores.csv
///   scores/<scorer>/                 scores.csv (+ classifier.ckpt for classifier scorers)
///   labels/<scorer>_n<N>/            labels.csv
///   pretrain/<method>/               backbone.ckpt, head.ckpt, loss.csv
///   probe/<method>/                  <task>.ckpt
///   eval/<method>/                   result.json
///   ablate/                          ablation.csv
///   report/                          table1.csv, table1_f1.csv, table2.csv, contact_sheet.pgm,
///                                    extremes.json, provenance.json
/// Every stage directory holds a stamp.json with the config hash and seeds.
struct RunContext {
  std::filesystem::path root;
  ExperimentConfig config;
  std::string hash;
  bool force = false;

  /// Creates the run directory if needed. An existing config.ini with another
  /// hash is a ConfigError unless `force`.
  static RunContext open(const std::filesystem::path& root, const ExperimentConfig& config,
                         bool force = false);

  std::uint64_t stage_seed(const std::string& stage) const;
};

inline const std::vector<std::string> kScorers{"severity", "msp", "odin", "mahalanobis"};
inline const std::vector<std::string> kProbeTasks{"bio_a", "bio_b", "bio_c", "bio_d", "bio_e",
                                                  "multilabel"};

/// "<scorer>-n<N>" for label-driven pretraining; "simclr" and "random" otherwise.
std::string method_name(const std::string& scorer, std::size_t n_bins);

void run_gen_data(const RunContext& ctx);
void run_train_gradcon(const RunContext& ctx);
void run_score(const RunContext& ctx, const std::string& scorer);
void run_make_labels(const RunContext& ctx, const std::string& scorer, std::size_t n_bins);
/// mode "severity" pretrains on labels/<scorer>_n<N>; mode "simclr" ignores both.
void run_pretrain(const RunContext& ctx, const std::string& mode, const std::string& scorer,
                  std::size_t n_bins);
/// Method "random" probes the untrained initial backbone.
void run_probe(const RunContext& ctx, const std::string& method, const std::string& task);
void run_evaluate(const RunContext& ctx, const std::string& method);
void run_ablate(const RunContext& ctx);
void run_report(const RunContext& ctx);
/// Every stage in order, skipping stages whose artifacts are already current.
void run_all(const RunContext& ctx);

}  // namespace sevcon
