#include "sevcon/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sevcon/tensor.hpp"

namespace sevcon {

namespace {

void check_sizes(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": length mismatch");
}

}  // namespace

double accuracy(std::span<const std::uint8_t> predictions, std::span<const std::uint8_t> labels) {
  check_sizes(predictions.size(), labels.size(), "accuracy");
  if (labels.empty()) throw Error("accuracy: no samples");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    correct += (predictions[i] != 0) == (labels[i] != 0);
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

PrecisionRecall precision_recall(std::span<const std::uint8_t> predictions,
                                 std::span<const std::uint8_t> labels) {
  check_sizes(predictions.size(), labels.size(), "f1");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool p = predictions[i] != 0;
    const bool l = labels[i] != 0;
    tp += p && l;
    fp += p && !l;
    fn += !p && l;
  }
  PrecisionRecall out;
  if (tp + fp > 0) out.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  if (tp + fn > 0) out.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (out.precision + out.recall > 0.0) {
    out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
  }
  return out;
}

double f1(std::span<const std::uint8_t> predictions, std::span<const std::uint8_t> labels) {
  return precision_recall(predictions, labels).f1;
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i + 1;
    while (j < order.size() && values[order[j]] == values[order[i]]) ++j;
    // positions i..j-1 (0-based) share rank mean((i+1)..j)
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = rank;
    i = j;
  }
  return ranks;
}

double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_sizes(scores.size(), labels.size(), "roc_auc");
  for (double s : scores) {
    if (std::isnan(s)) throw NumericalError("roc_auc: NaN score");
  }
  const auto ranks = average_ranks(scores);
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i]) {
      positive_rank_sum += ranks[i];
      ++positives;
    }
  }
  const std::size_t negatives = labels.size() - positives;
  if (positives == 0 || negatives == 0) {
    throw Error("roc_auc: both classes must be present");
  }
  const double np = static_cast<double>(positives);
  const double u = positive_rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(negatives));
}

double spearman(std::span<const double> a, std::span<const double> b) {
  check_sizes(a.size(), b.size(), "spearman");
  if (a.size() < 2) throw Error("spearman: need at least two observations");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace sevcon
