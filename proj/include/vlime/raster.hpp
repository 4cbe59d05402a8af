#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace vlime {

/// Per-channel fill value used for blacking out pixels. Grayscale images use
/// the first component only.
struct Fill {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;

  std::uint8_t operator[](int c) const { return c == 0 ? r : (c == 1 ? g : b); }
  bool operator==(const Fill&) const = default;
};

/// 8-bit raster with 1 (gray) or 3 (RGB) interleaved channels, row-major.
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, std::uint8_t value = 0);
  Image(int width, int height, int channels, std::vector<std::uint8_t> data);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(width_) * height_;
  }
  bool empty() const { return data_.empty(); }

  std::uint8_t at(int x, int y, int c) const {
    return data_[index(x, y) * channels_ + c];
  }
  std::uint8_t& at(int x, int y, int c) {
    return data_[index(x, y) * channels_ + c];
  }

  std::span<const std::uint8_t> data() const { return data_; }
  std::span<std::uint8_t> data() { return data_; }

  /// Sets every channel of pixel `p` (row-major index) to `fill`.
  void fill_pixel(std::size_t p, const Fill& fill);
  bool pixel_equals(std::size_t p, const Fill& fill) const;

  bool operator==(const Image&) const = default;

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * width_ + x;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Real-valued importance map, row-major, same geometry as the explained
/// image.
class Heatmap {
 public:
  Heatmap() = default;
  Heatmap(int width, int height, double value = 0.0);
  Heatmap(int width, int height, std::vector<double> values);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return values_.size(); }

  double at(int x, int y) const {
    return values_[static_cast<std::size_t>(y) * width_ + x];
  }
  double& at(int x, int y) {
    return values_[static_cast<std::size_t>(y) * width_ + x];
  }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  bool same_shape(const Heatmap& other) const {
    return width_ == other.width_ && height_ == other.height_;
  }

  bool operator==(const Heatmap&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> values_;
};

Image flip_horizontal(const Image& img);

/// Separable convolution with a normalized Gaussian of radius ceil(3*sigma),
/// replicate border. sigma == 0 returns the input unchanged.
Heatmap gaussian_smooth(const Heatmap& map, double sigma);

/// Normalized 1-D Gaussian taps for `sigma` > 0, length 2*ceil(3*sigma)+1.
std::vector<double> gaussian_kernel(double sigma);

/// Min-max scaling to [0,1]. Flat maps (range < 1e-12) become all-zero.
Heatmap normalize_01(const Heatmap& map);

/// PSNR in dB with unit peak value; +infinity for identical maps.
double psnr(const Heatmap& a, const Heatmap& b);

Heatmap average_heatmaps(std::span<const Heatmap> maps);

}  // namespace vlime
