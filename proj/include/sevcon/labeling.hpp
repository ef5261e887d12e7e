#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sevcon/tensor.hpp"

namespace sevcon {

/// Equal-population binning of ranked severity scores.
struct SeverityLabeling {
  std::size_t n_bins = 0;
  std::vector<std::uint32_t> labels;       // per sample, in [0, n_bins)
  std::vector<std::size_t> sorted_order;   // sample indices by ascending score
  std::vector<std::size_t> bin_sizes;
};

/// Stable ascending sort (ties by original index), then contiguous rank chunks;
/// the first (count mod n_bins) bins get one extra sample.
SeverityLabeling assign_severity_labels(std::span<const double> scores, std::size_t n_bins);

/// Sample indices holding `label`, in ascending score order.
std::vector<std::size_t> bin_members(const SeverityLabeling& labeling, std::uint32_t label);

struct ExtremeBinReport {
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> low;   // drawn from bin 0
  std::vector<std::size_t> high;  // drawn from bin n_bins - 1
};

/// Seeded draw of k samples from each extreme bin; k may not exceed the
/// smallest bin.
ExtremeBinReport extreme_bin_report(const SeverityLabeling& labeling, std::size_t k,
                                    std::uint64_t seed);

/// Two-row grayscale contact sheet (low bin on top) as binary PGM bytes.
std::string render_contact_sheet(const ExtremeBinReport& report, std::span<const Tensor> images,
                                 std::size_t upscale = 4);

}  // namespace sevcon
