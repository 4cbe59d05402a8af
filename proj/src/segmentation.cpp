#include "vlime/segmentation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

#include "vlime/error.hpp"

namespace vlime {

namespace {

struct Feature {
  double l = 0.0;
  double a = 0.0;
  double b = 0.0;
};

double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double lab_f(double t) {
  constexpr double kDelta = 6.0 / 29.0;
  return t > kDelta * kDelta * kDelta ? std::cbrt(t)
                                      : t / (3.0 * kDelta * kDelta) + 4.0 / 29.0;
}

// D65 white point.
Feature rgb_to_lab(std::uint8_t r8, std::uint8_t g8, std::uint8_t b8) {
  const double r = srgb_to_linear(r8 / 255.0);
  const double g = srgb_to_linear(g8 / 255.0);
  const double b = srgb_to_linear(b8 / 255.0);
  const double x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
  const double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
  const double z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
  const double fx = lab_f(x);
  const double fy = lab_f(y);
  const double fz = lab_f(z);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

std::vector<Feature> pixel_features(const Image& img) {
  std::vector<Feature> out(img.pixel_count());
  const auto data = img.data();
  if (img.channels() == 1) {
    // Intensity on the same 0..100 scale as L*.
    for (std::size_t p = 0; p < out.size(); ++p) out[p].l = data[p] * (100.0 / 255.0);
  } else {
    for (std::size_t p = 0; p < out.size(); ++p) {
      out[p] = rgb_to_lab(data[3 * p], data[3 * p + 1], data[3 * p + 2]);
    }
  }
  return out;
}

struct Center {
  double x = 0.0;
  double y = 0.0;
  Feature f;
};

struct DisjointSets {
  std::vector<int> parent;
  int find(int i) {
    while (parent[i] != i) {
      parent[i] = parent[parent[i]];
      i = parent[i];
    }
    return i;
  }
};

// Labels 4-connected components of equal `labels` values. Returns the
// component id per pixel (ids assigned in scan order) and the component count.
int connected_components(int w, int h, std::span<const int> labels,
                         std::vector<int>& comp) {
  comp.assign(labels.size(), -1);
  std::vector<std::size_t> stack;
  int next = 0;
  for (std::size_t start = 0; start < labels.size(); ++start) {
    if (comp[start] >= 0) continue;
    comp[start] = next;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      const int x = static_cast<int>(p % w);
      const int y = static_cast<int>(p / w);
      const std::array<std::pair<int, int>, 4> nbrs = {
          {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}}};
      for (auto [nx, ny] : nbrs) {
        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
        const std::size_t q = static_cast<std::size_t>(ny) * w + nx;
        if (comp[q] < 0 && labels[q] == labels[p]) {
          comp[q] = next;
          stack.push_back(q);
        }
      }
    }
    ++next;
  }
  return next;
}

std::vector<int> enforce_connectivity(int w, int h, std::span<const int> cluster,
                                      int n_clusters, std::size_t min_size) {
  std::vector<int> comp;
  const int n_comp = connected_components(w, h, cluster, comp);

  std::vector<std::size_t> size(n_comp, 0);
  std::vector<int> comp_cluster(n_comp, -1);
  for (std::size_t p = 0; p < comp.size(); ++p) {
    ++size[comp[p]];
    comp_cluster[comp[p]] = cluster[p];
  }

  // Each cluster keeps its largest fragment (first in scan order on ties).
  std::vector<int> largest(n_clusters, -1);
  for (int c = 0; c < n_comp; ++c) {
    int& best = largest[comp_cluster[c]];
    if (best < 0 || size[c] > size[best]) best = c;
  }
  std::vector<char> kept(n_comp, 0);
  bool any_kept = false;
  for (int best : largest) {
    if (best >= 0 && size[best] >= min_size) {
      kept[best] = 1;
      any_kept = true;
    }
  }
  if (!any_kept) {
    kept[std::max_element(size.begin(), size.end()) - size.begin()] = 1;
  }

  std::vector<std::vector<int>> adjacency(n_comp);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * w + x;
      if (x + 1 < w && comp[p + 1] != comp[p]) {
        adjacency[comp[p]].push_back(comp[p + 1]);
        adjacency[comp[p + 1]].push_back(comp[p]);
      }
      if (y + 1 < h && comp[p + w] != comp[p]) {
        adjacency[comp[p]].push_back(comp[p + w]);
        adjacency[comp[p + w]].push_back(comp[p]);
      }
    }
  }
  for (auto& nbrs : adjacency) {
    std::sort(nbrs.begin(), nbrs.end());
    nbrs.erase(std::unique(nbrs.begin(), nbrs.end()), nbrs.end());
  }

  // Orphan-only sets merge into their largest neighbouring set until every
  // set holds exactly one kept fragment. Merging adjacent connected sets
  // preserves connectivity, and kept fragments are never merged together.
  DisjointSets sets{std::vector<int>(n_comp)};
  for (int c = 0; c < n_comp; ++c) sets.parent[c] = c;
  std::vector<std::size_t> set_size = size;
  std::vector<char> set_kept = kept;
  for (bool changed = true; changed;) {
    changed = false;
    for (int c = 0; c < n_comp; ++c) {
      const int r = sets.find(c);
      if (set_kept[r]) continue;
      int best = -1;
      for (int n : adjacency[c]) {
        const int rn = sets.find(n);
        if (rn == r) continue;
        if (best < 0 || set_size[rn] > set_size[best] ||
            (set_size[rn] == set_size[best] && rn < best)) {
          best = rn;
        }
      }
      if (best < 0) continue;
      sets.parent[r] = best;
      set_size[best] += set_size[r];
      set_kept[best] = static_cast<char>(set_kept[best] | set_kept[r]);
      changed = true;
    }
  }

  // Dense relabelling by first occurrence in scan order.
  std::vector<int> root_label(n_comp, -1);
  std::vector<int> out(comp.size());
  int next = 0;
  for (std::size_t p = 0; p < comp.size(); ++p) {
    const int r = sets.find(comp[p]);
    if (root_label[r] < 0) root_label[r] = next++;
    out[p] = root_label[r];
  }
  return out;
}

}  // namespace

SuperpixelMap::SuperpixelMap(int width, int height, std::vector<int> labels)
    : width_(width), height_(height), labels_(std::move(labels)) {
  if (width < 1 || height < 1 ||
      labels_.size() != static_cast<std::size_t>(width) * height) {
    throw InvalidArgument("superpixel map: label buffer does not match dimensions");
  }
  int max_label = -1;
  for (int l : labels_) {
    if (l < 0) throw InvalidArgument("superpixel map: negative label");
    max_label = std::max(max_label, l);
  }
  count_ = max_label + 1;
  std::vector<int> comp;
  const int n_comp = connected_components(width_, height_, labels_, comp);
  if (n_comp != count_) {
    throw InvalidArgument(
        "superpixel map: labels must be dense and 4-connected (found " +
        std::to_string(n_comp) + " components for " + std::to_string(count_) +
        " labels)");
  }
  // n_comp == count_ with every label owning >= 1 component means each label
  // is used exactly once as a single component.
  std::vector<char> seen(count_, 0);
  for (int l : labels_) seen[l] = 1;
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    throw InvalidArgument("superpixel map: labels are not contiguous");
  }
}

std::vector<std::size_t> SuperpixelMap::region_sizes() const {
  std::vector<std::size_t> sizes(count_, 0);
  for (int l : labels_) ++sizes[l];
  return sizes;
}

std::pair<int, int> slic_grid(int width, int height, int k_target) {
  const double ideal = std::sqrt(static_cast<double>(k_target) * width / height);
  const int cols = std::clamp(static_cast<int>(std::lround(ideal)), 1,
                              std::min(width, k_target));
  const int rows = std::clamp(k_target / cols, 1, height);
  return {cols, rows};
}

SuperpixelMap slic_segment(const Image& img, const SlicParams& params) {
  const int w = img.width();
  const int h = img.height();
  const std::size_t n = img.pixel_count();
  if (params.k_target < 1) {
    throw InvalidArgument("slic_segment: k_target must be >= 1");
  }
  if (static_cast<std::size_t>(params.k_target) > n) {
    throw InvalidArgument("slic_segment: k_target " + std::to_string(params.k_target) +
                          " exceeds pixel count " + std::to_string(n));
  }
  if (!(params.compactness > 0.0)) {
    throw InvalidArgument("slic_segment: compactness must be > 0");
  }
  if (params.iterations < 1) {
    throw InvalidArgument("slic_segment: iterations must be >= 1");
  }

  const std::vector<Feature> feat = pixel_features(img);
  const auto [cols, rows] = slic_grid(w, h, params.k_target);
  const double step_x = static_cast<double>(w) / cols;
  const double step_y = static_cast<double>(h) / rows;
  const double step = std::sqrt(step_x * step_y);
  const double spatial_weight =
      (params.compactness / step) * (params.compactness / step);

  std::vector<Center> centers;
  centers.reserve(static_cast<std::size_t>(cols) * rows);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      Center ctr;
      ctr.x = (c + 0.5) * step_x - 0.5;
      ctr.y = (r + 0.5) * step_y - 0.5;
      const int px = std::clamp(static_cast<int>(std::lround(ctr.x)), 0, w - 1);
      const int py = std::clamp(static_cast<int>(std::lround(ctr.y)), 0, h - 1);
      ctr.f = feat[static_cast<std::size_t>(py) * w + px];
      centers.push_back(ctr);
    }
  }

  auto distance = [&](const Center& ctr, int x, int y) {
    const Feature& f = feat[static_cast<std::size_t>(y) * w + x];
    const double dl = f.l - ctr.f.l;
    const double da = f.a - ctr.f.a;
    const double db = f.b - ctr.f.b;
    const double dx = x - ctr.x;
    const double dy = y - ctr.y;
    return dl * dl + da * da + db * db + spatial_weight * (dx * dx + dy * dy);
  };

  const int reach_x = static_cast<int>(std::ceil(step_x));
  const int reach_y = static_cast<int>(std::ceil(step_y));
  std::vector<int> assign(n, -1);
  std::vector<double> best(n);
  for (int iter = 0; iter < params.iterations; ++iter) {
    std::fill(assign.begin(), assign.end(), -1);
    std::fill(best.begin(), best.end(), std::numeric_limits<double>::infinity());
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const Center& ctr = centers[k];
      const int cx = static_cast<int>(std::lround(ctr.x));
      const int cy = static_cast<int>(std::lround(ctr.y));
      const int x0 = std::max(0, cx - reach_x);
      const int x1 = std::min(w - 1, cx + reach_x);
      const int y0 = std::max(0, cy - reach_y);
      const int y1 = std::min(h - 1, cy + reach_y);
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          const std::size_t p = static_cast<std::size_t>(y) * w + x;
          const double d = distance(ctr, x, y);
          if (d < best[p]) {
            best[p] = d;
            assign[p] = static_cast<int>(k);
          }
        }
      }
    }
    // Pixels outside every search window fall back to the nearest center.
    for (std::size_t p = 0; p < n; ++p) {
      if (assign[p] >= 0) continue;
      const int x = static_cast<int>(p % w);
      const int y = static_cast<int>(p / w);
      for (std::size_t k = 0; k < centers.size(); ++k) {
        const double d = distance(centers[k], x, y);
        if (d < best[p]) {
          best[p] = d;
          assign[p] = static_cast<int>(k);
        }
      }
    }

    std::vector<Center> sums(centers.size(), Center{});
    std::vector<std::size_t> counts(centers.size(), 0);
    for (std::size_t p = 0; p < n; ++p) {
      Center& s = sums[assign[p]];
      s.x += static_cast<double>(p % w);
      s.y += static_cast<double>(p / w);
      s.f.l += feat[p].l;
      s.f.a += feat[p].a;
      s.f.b += feat[p].b;
      ++counts[assign[p]];
    }
    for (std::size_t k = 0; k < centers.size(); ++k) {
      if (counts[k] == 0) continue;
      const double inv = 1.0 / static_cast<double>(counts[k]);
      centers[k] = {sums[k].x * inv,
                    sums[k].y * inv,
                    {sums[k].f.l * inv, sums[k].f.a * inv, sums[k].f.b * inv}};
    }
  }

  const std::size_t min_size =
      std::max<std::size_t>(1, static_cast<std::size_t>(step * step / 64.0));
  std::vector<int> labels = enforce_connectivity(
      w, h, assign, static_cast<int>(centers.size()), min_size);
  return SuperpixelMap(w, h, std::move(labels));
}

Image boundary_overlay(const Image& img, const SuperpixelMap& sp, const Fill& color) {
  if (sp.width() != img.width() || sp.height() != img.height()) {
    throw InvalidArgument("boundary_overlay: dimension mismatch");
  }
  Image out = img;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const int l = sp.label(x, y);
      const bool edge = (x + 1 < img.width() && sp.label(x + 1, y) != l) ||
                        (y + 1 < img.height() && sp.label(x, y + 1) != l);
      if (edge) out.fill_pixel(static_cast<std::size_t>(y) * img.width() + x, color);
    }
  }
  return out;
}

}  // namespace vlime
