#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vlime/raster.hpp"
#include "vlime/segmentation.hpp"

namespace vlime {

struct PerturbConfig {
  int n_samples = 1000;
  double p_blackout = 0.6;
  Fill fill{};
  double kernel_width = 0.25;
  std::uint64_t seed = 0;
  // Row 0 is the unperturbed (all-ones) sample.
  bool anchor = true;

  void validate() const;
};

/// n x k binary activation matrix (1 = superpixel kept) with one locality
/// weight per row.
class PerturbationSet {
 public:
  PerturbationSet(int n, int k, std::vector<std::uint8_t> bits,
                  std::vector<double> weights, std::uint64_t seed);

  int n() const { return n_; }
  int k() const { return k_; }
  std::uint64_t seed() const { return seed_; }

  std::span<const std::uint8_t> row(int i) const {
    return std::span<const std::uint8_t>(bits_).subspan(
        static_cast<std::size_t>(i) * k_, k_);
  }
  std::span<const std::uint8_t> bits() const { return bits_; }
  std::span<const double> weights() const { return weights_; }

  /// Fraction of active bits over the whole matrix.
  double active_fraction() const;

  /// n rows of k comma-separated 0/1 values, preceded by a header row
  /// sp0,...,sp{k-1}.
  std::string to_csv() const;

  bool operator==(const PerturbationSet&) const = default;

 private:
  int n_ = 0;
  int k_ = 0;
  std::vector<std::uint8_t> bits_;
  std::vector<double> weights_;
  std::uint64_t seed_ = 0;
};

/// Each bit is drawn from Xoshiro256(seed): bit = 0 iff uniform() <
/// p_blackout, row-major order. With cfg.anchor the first row is forced to
/// all ones (its draws are still consumed, so rows 1.. are unchanged).
PerturbationSet sample_masks(const PerturbConfig& cfg, int k);

/// exp(-d^2 / kernel_width^2) with d = 1 - sqrt(active/k), the cosine
/// distance between the mask and the all-ones vector.
double locality_weight(std::span<const std::uint8_t> mask, double kernel_width);

/// Pixels whose superpixel has mask bit 0 are set to `fill`.
Image apply_mask(const Image& img, const SuperpixelMap& sp,
                 std::span<const std::uint8_t> mask, const Fill& fill);

/// Per-image seed for batch runs.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return master ^ index;
}

}  // namespace vlime
