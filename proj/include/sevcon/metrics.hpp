#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace sevcon {

double accuracy(std::span<const std::uint8_t> predictions, std::span<const std::uint8_t> labels);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Precision/recall/F1 of the positive class; each is 0 when its denominator is 0.
PrecisionRecall precision_recall(std::span<const std::uint8_t> predictions,
                                 std::span<const std::uint8_t> labels);
double f1(std::span<const std::uint8_t> predictions, std::span<const std::uint8_t> labels);

/// Mann-Whitney AUC: P(score of a random positive > score of a random negative),
/// ties counted as one half. Throws unless both classes are present.
double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Average ranks (1-based), ties share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> values);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace sevcon
