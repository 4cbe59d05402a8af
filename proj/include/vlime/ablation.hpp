#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "vlime/embedding.hpp"
#include "vlime/raster.hpp"
#include "vlime/verification.hpp"

namespace vlime {

struct BlackoutResult {
  Image image;
  std::size_t removed = 0;
};

/// Sets every pixel whose heatmap value is strictly greater than t to fill.
BlackoutResult blackout_above_threshold(const Image& img, const Heatmap& map, double t,
                                        const Fill& fill);

/// Sets exactly `count` distinct pixels, chosen uniformly at random (partial
/// Fisher-Yates driven by Xoshiro256(seed)), to fill.
Image random_blackout(const Image& img, std::size_t count, const Fill& fill,
                      std::uint64_t seed);

/// Seed of the random-removal baseline for one (image, threshold) cell.
std::uint64_t ablation_seed(std::uint64_t master, std::size_t image_index,
                            std::size_t threshold_index);

struct Summary {
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  double mean = 0.0;
};

/// Five-number summary plus mean; quartiles by linear interpolation between
/// order statistics.
Summary summarize(std::span<const double> values);

struct AblationReport {
  double threshold = 0.0;
  std::vector<double> fraction_removed;  // per image, manifest order
  Summary removal;
  double eer_targeted = 0.0;
  double eer_random = 0.0;
  // Mean over images of 1 - cos(embed(original), embed(ablated)).
  double similarity_drop_targeted = 0.0;
  double similarity_drop_random = 0.0;
  std::size_t failed_pairs_targeted = 0;
  std::size_t failed_pairs_random = 0;
  std::uint64_t seed = 0;
};

struct AblationOptions {
  std::optional<PoseFilter> pose_filter;
  int workers = 1;
};

/// For each threshold, builds the heatmap-targeted and the matched-count
/// random ablation of every manifest image, rescores the verification pair
/// protocol on both image sets and reports the paired EERs, the embedding
/// similarity drop and the removal statistics. `images` and `heatmaps`
/// follow manifest order.
std::vector<AblationReport> ablation_sweep(const DatasetManifest& manifest,
                                           const std::vector<Image>& images,
                                           const Embedder& embedder,
                                           const std::vector<Heatmap>& heatmaps,
                                           std::span<const double> thresholds,
                                           const Fill& fill, std::uint64_t seed,
                                           const AblationOptions& options = {});

}  // namespace vlime
