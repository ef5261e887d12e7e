#include "sevcon/labeling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace sevcon {

SeverityLabeling assign_severity_labels(std::span<const double> scores, std::size_t n_bins) {
  const std::size_t count = scores.size();
  if (n_bins < 1 || n_bins > count) {
    throw ConfigError("n_bins must lie in [1, " + std::to_string(count) + "], got " +
                      std::to_string(n_bins));
  }
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::isfinite(scores[i])) {
      throw NumericalError("severity score " + std::to_string(i) + " is not finite");
    }
  }

  SeverityLabeling out;
  out.n_bins = n_bins;
  out.sorted_order.resize(count);
  std::iota(out.sorted_order.begin(), out.sorted_order.end(), std::size_t{0});
  std::stable_sort(out.sorted_order.begin(), out.sorted_order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  const std::size_t base = count / n_bins;
  const std::size_t extra = count % n_bins;
  out.bin_sizes.resize(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) out.bin_sizes[b] = base + (b < extra ? 1 : 0);

  out.labels.resize(count);
  std::size_t rank = 0;
  for (std::size_t b = 0; b < n_bins; ++b) {
    for (std::size_t j = 0; j < out.bin_sizes[b]; ++j, ++rank) {
      out.labels[out.sorted_order[rank]] = static_cast<std::uint32_t>(b);
    }
  }
  return out;
}

std::vector<std::size_t> bin_members(const SeverityLabeling& labeling, std::uint32_t label) {
  std::vector<std::size_t> out;
  for (auto idx : labeling.sorted_order) {
    if (labeling.labels[idx] == label) out.push_back(idx);
  }
  return out;
}

ExtremeBinReport extreme_bin_report(const SeverityLabeling& labeling, std::size_t k,
                                    std::uint64_t seed) {
  if (labeling.bin_sizes.empty()) throw Error("extreme_bin_report: empty labeling");
  const std::size_t smallest =
      *std::min_element(labeling.bin_sizes.begin(), labeling.bin_sizes.end());
  if (k > smallest) {
    throw ConfigError("extreme_bin_report: k=" + std::to_string(k) +
                      " exceeds the smallest bin size " + std::to_string(smallest));
  }
  ExtremeBinReport report;
  report.k = k;
  report.seed = seed;
  std::mt19937_64 rng(seed);
  auto draw = [&](std::uint32_t label) {
    auto members = bin_members(labeling, label);
    std::shuffle(members.begin(), members.end(), rng);
    members.resize(k);
    return members;
  };
  report.low = draw(0);
  report.high = draw(static_cast<std::uint32_t>(labeling.n_bins - 1));
  return report;
}

std::string render_contact_sheet(const ExtremeBinReport& report, std::span<const Tensor> images,
                                 std::size_t upscale) {
  if (report.k == 0) throw ConfigError("contact sheet needs k >= 1");
  const std::size_t side = images[report.low.front()].dim(0);
  const std::size_t gap = 2;
  const std::size_t cell = side * upscale;
  const std::size_t width = report.k * cell + (report.k + 1) * gap;
  const std::size_t height = 2 * cell + 3 * gap;
  std::vector<unsigned char> pixels(width * height, 255);
  auto blit = [&](std::size_t row, std::size_t col, const Tensor& img) {
    if (img.shape() != Shape{side, side}) throw ShapeError("contact sheet: mixed image sizes");
    const std::size_t y0 = gap + row * (cell + gap);
    const std::size_t x0 = gap + col * (cell + gap);
    for (std::size_t y = 0; y < cell; ++y) {
      for (std::size_t x = 0; x < cell; ++x) {
        const double v = std::clamp(img[(y / upscale) * side + x / upscale], 0.0, 1.0);
        pixels[(y0 + y) * width + x0 + x] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
  };
  for (std::size_t i = 0; i < report.k; ++i) {
    blit(0, i, images[report.low[i]]);
    blit(1, i, images[report.high[i]]);
  }
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
  return out;
}

}  // namespace sevcon
