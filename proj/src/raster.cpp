#include "vlime/raster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "vlime/error.hpp"

namespace vlime {

namespace {

void check_geometry(int width, int height) {
  if (width < 1 || height < 1) {
    throw InvalidArgument("raster dimensions must be positive, got " +
                          std::to_string(width) + "x" + std::to_string(height));
  }
}

}  // namespace

Image::Image(int width, int height, int channels, std::uint8_t value)
    : width_(width), height_(height), channels_(channels) {
  check_geometry(width, height);
  if (channels != 1 && channels != 3) {
    throw InvalidArgument("image channels must be 1 or 3");
  }
  data_.assign(pixel_count() * channels_, value);
}

Image::Image(int width, int height, int channels, std::vector<std::uint8_t> data)
    : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
  check_geometry(width, height);
  if (channels != 1 && channels != 3) {
    throw InvalidArgument("image channels must be 1 or 3");
  }
  if (data_.size() != pixel_count() * channels_) {
    throw InvalidArgument("image buffer size does not match width*height*channels");
  }
}

void Image::fill_pixel(std::size_t p, const Fill& fill) {
  std::uint8_t* px = data_.data() + p * channels_;
  for (int c = 0; c < channels_; ++c) px[c] = fill[c];
}

bool Image::pixel_equals(std::size_t p, const Fill& fill) const {
  const std::uint8_t* px = data_.data() + p * channels_;
  for (int c = 0; c < channels_; ++c) {
    if (px[c] != fill[c]) return false;
  }
  return true;
}

Heatmap::Heatmap(int width, int height, double value)
    : width_(width), height_(height) {
  check_geometry(width, height);
  values_.assign(static_cast<std::size_t>(width) * height, value);
}

Heatmap::Heatmap(int width, int height, std::vector<double> values)
    : width_(width), height_(height), values_(std::move(values)) {
  check_geometry(width, height);
  if (values_.size() != static_cast<std::size_t>(width) * height) {
    throw InvalidArgument("heatmap buffer size does not match width*height");
  }
}

Image flip_horizontal(const Image& img) {
  Image out = img;
  const int w = img.width();
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < img.channels(); ++c) {
        out.at(x, y, c) = img.at(w - 1 - x, y, c);
      }
    }
  }
  return out;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw InvalidArgument("gaussian kernel needs a positive finite sigma");
  }
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma * sigma));
    taps[i + radius] = v;
    sum += v;
  }
  for (auto& v : taps) v /= sum;
  return taps;
}

Heatmap gaussian_smooth(const Heatmap& map, double sigma) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw InvalidArgument("gaussian_smooth: sigma must be >= 0");
  }
  if (sigma == 0.0) return map;

  const std::vector<double> taps = gaussian_kernel(sigma);
  const int radius = static_cast<int>(taps.size() / 2);
  const int w = map.width();
  const int h = map.height();

  Heatmap rows(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        const int sx = std::clamp(x + k, 0, w - 1);
        acc += taps[k + radius] * map.at(sx, y);
      }
      rows.at(x, y) = acc;
    }
  }
  Heatmap out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        const int sy = std::clamp(y + k, 0, h - 1);
        acc += taps[k + radius] * rows.at(x, sy);
      }
      out.at(x, y) = acc;
    }
  }
  // A convex combination cannot leave the input range; rounding can nudge it
  // by an ulp, so pin it back.
  const auto [lo, hi] = std::minmax_element(map.values().begin(), map.values().end());
  for (auto& v : out.values()) v = std::clamp(v, *lo, *hi);
  return out;
}

Heatmap normalize_01(const Heatmap& map) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (double v : map.values()) {
    if (!std::isfinite(v)) {
      throw NumericalError("normalize_01: heatmap contains non-finite values");
    }
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Heatmap out(map.width(), map.height(), 0.0);
  const double range = hi - lo;
  if (range < 1e-12) return out;
  for (std::size_t i = 0; i < map.size(); ++i) {
    out[i] = std::clamp((map[i] - lo) / range, 0.0, 1.0);
  }
  return out;
}

double psnr(const Heatmap& a, const Heatmap& b) {
  if (!a.same_shape(b)) {
    throw InvalidArgument("psnr: heatmap dimensions differ");
  }
  double sse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sse += d * d;
  }
  if (sse == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = sse / static_cast<double>(a.size());
  return 10.0 * std::log10(1.0 / mse);
}

Heatmap average_heatmaps(std::span<const Heatmap> maps) {
  if (maps.empty()) {
    throw InvalidArgument("average_heatmaps: empty list");
  }
  const Heatmap& first = maps.front();
  for (const auto& m : maps) {
    if (!m.same_shape(first)) {
      throw InvalidArgument("average_heatmaps: dimension mismatch");
    }
  }
  Heatmap out(first.width(), first.height(), 0.0);
  const double n = static_cast<double>(maps.size());
  std::vector<double> column(maps.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    // Sorted summation keeps the mean independent of list order.
    for (std::size_t k = 0; k < maps.size(); ++k) column[k] = maps[k][i];
    std::sort(column.begin(), column.end());
    double acc = 0.0;
    for (double v : column) acc += v;
    out[i] = acc / n;
  }
  return out;
}

}  // namespace vlime
