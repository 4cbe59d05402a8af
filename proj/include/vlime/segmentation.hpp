#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vlime/raster.hpp"

namespace vlime {

/// Dense superpixel labelling. Labels are 0..count()-1, each used at least
/// once, and every label's pixel set is 4-connected.
class SuperpixelMap {
 public:
  SuperpixelMap() = default;
  /// Validates the invariants; throws InvalidArgument otherwise.
  SuperpixelMap(int width, int height, std::vector<int> labels);

  int width() const { return width_; }
  int height() const { return height_; }
  int count() const { return count_; }
  int label(int x, int y) const {
    return labels_[static_cast<std::size_t>(y) * width_ + x];
  }
  std::span<const int> labels() const { return labels_; }

  /// Pixel count of each label.
  std::vector<std::size_t> region_sizes() const;

  bool operator==(const SuperpixelMap&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int count_ = 0;
  std::vector<int> labels_;
};

struct SlicParams {
  int k_target = 75;
  double compactness = 10.0;
  int iterations = 10;
};

/// SLIC superpixels on CIELAB (RGB input) or intensity (gray input), grid
/// seeded, followed by orphan absorption: each cluster keeps its largest
/// 4-connected component, every other fragment joins its largest adjacent
/// region. Deterministic; count() <= k_target.
SuperpixelMap slic_segment(const Image& img, const SlicParams& params);

/// Grid dimensions (columns, rows) used for seeding; columns*rows <= k_target.
std::pair<int, int> slic_grid(int width, int height, int k_target);

/// Copy of `img` with label boundaries painted in `color` (documentation aid).
Image boundary_overlay(const Image& img, const SuperpixelMap& sp, const Fill& color);

}  // namespace vlime
