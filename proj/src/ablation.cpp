#include "vlime/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "vlime/error.hpp"
#include "vlime/parallel.hpp"
#include "vlime/rng.hpp"

namespace vlime {
namespace {

// An ablation that wipes out every feature shares nothing with the original.
double similarity(const Embedding& original, const Embedding& ablated) {
  if (!(norm(ablated) >= 1e-12)) return 0.0;
  return cosine_similarity(original, ablated);
}

}  // namespace

BlackoutResult blackout_above_threshold(const Image& img, const Heatmap& map, double t,
                                        const Fill& fill) {
  if (map.width() != img.width() || map.height() != img.height()) {
    throw InvalidArgument("blackout_above_threshold: heatmap and image dimensions differ");
  }
  BlackoutResult out{img, 0};
  for (std::size_t p = 0; p < map.size(); ++p) {
    if (map[p] > t) {
      out.image.fill_pixel(p, fill);
      ++out.removed;
    }
  }
  return out;
}

Image random_blackout(const Image& img, std::size_t count, const Fill& fill,
                      std::uint64_t seed) {
  const std::size_t n = img.pixel_count();
  if (count > n) {
    throw InvalidArgument("random_blackout: count " + std::to_string(count) +
                          " exceeds pixel total " + std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Xoshiro256 rng(seed);
  Image out = img;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(order[i], order[j]);
    out.fill_pixel(order[i], fill);
  }
  return out;
}

std::uint64_t ablation_seed(std::uint64_t master, std::size_t image_index,
                            std::size_t threshold_index) {
  return mix64(master ^ mix64((static_cast<std::uint64_t>(threshold_index) << 32) ^
                              static_cast<std::uint64_t>(image_index)));
}

Summary summarize(std::span<const double> values) {
  if (values.empty()) return {};
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  double sum = 0.0;
  for (double x : v) sum += x;
  return {v.front(), quantile(0.25), quantile(0.5), quantile(0.75), v.back(),
          sum / static_cast<double>(v.size())};
}

std::vector<AblationReport> ablation_sweep(const DatasetManifest& manifest,
                                           const std::vector<Image>& images,
                                           const Embedder& embedder,
                                           const std::vector<Heatmap>& heatmaps,
                                           std::span<const double> thresholds,
                                           const Fill& fill, std::uint64_t seed,
                                           const AblationOptions& options) {
  const std::size_t n = manifest.image_count();
  if (images.size() != n) {
    throw InvalidArgument("ablation_sweep: one image per manifest entry required");
  }
  if (heatmaps.size() != n) {
    throw DataError("ablation_sweep: missing heatmaps (" + std::to_string(heatmaps.size()) +
                    " for " + std::to_string(n) + " images)");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (heatmaps[i].width() != images[i].width() ||
        heatmaps[i].height() != images[i].height()) {
      throw DataError("ablation_sweep: heatmap size mismatch for " + manifest.image(i).path);
    }
  }
  const PairList pairs = generate_pairs(manifest, options.pose_filter);
  const std::size_t workers =
      embedder.concurrent() ? static_cast<std::size_t>(options.workers) : 1;

  std::vector<Embedding> original(n);
  parallel_for(n, workers, [&](std::size_t i) { original[i] = embed(embedder, images[i]); });

  std::vector<AblationReport> reports;
  for (std::size_t ti = 0; ti < thresholds.size(); ++ti) {
    const double t = thresholds[ti];
    AblationReport report;
    report.threshold = t;
    report.seed = seed;
    report.fraction_removed.resize(n);

    std::vector<Image> targeted(n);
    std::vector<Image> random(n);
    std::vector<double> drop_targeted(n);
    std::vector<double> drop_random(n);
    parallel_for(n, workers, [&](std::size_t i) {
      BlackoutResult cut = blackout_above_threshold(images[i], heatmaps[i], t, fill);
      random[i] = random_blackout(images[i], cut.removed, fill, ablation_seed(seed, i, ti));
      report.fraction_removed[i] =
          static_cast<double>(cut.removed) / static_cast<double>(images[i].pixel_count());
      targeted[i] = std::move(cut.image);
      drop_targeted[i] = 1.0 - similarity(original[i], embed(embedder, targeted[i]));
      drop_random[i] = 1.0 - similarity(original[i], embed(embedder, random[i]));
    });
    report.removal = summarize(report.fraction_removed);
    report.similarity_drop_targeted = summarize(drop_targeted).mean;
    report.similarity_drop_random = summarize(drop_random).mean;

    const ScoreSet scores_targeted =
        score_pairs(manifest, pairs, LiveDescriptors(embedder, memory_images(targeted)),
                    options.workers);
    const ScoreSet scores_random =
        score_pairs(manifest, pairs, LiveDescriptors(embedder, memory_images(random)),
                    options.workers);
    report.failed_pairs_targeted = scores_targeted.failed_pairs;
    report.failed_pairs_random = scores_random.failed_pairs;
    report.eer_targeted = eer(scores_targeted).eer_percent;
    report.eer_random = eer(scores_random).eer_percent;
    reports.push_back(std::move(report));
  }
  return reports;
}

}  // namespace vlime
