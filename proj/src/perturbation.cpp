#include "vlime/perturbation.hpp"

#include <cmath>
#include <string>

#include "vlime/error.hpp"
#include "vlime/rng.hpp"

namespace vlime {

void PerturbConfig::validate() const {
  if (n_samples < 1) throw InvalidArgument("n_samples must be >= 1");
  if (!(p_blackout >= 0.0 && p_blackout <= 1.0)) {
    throw InvalidArgument("p_blackout must lie in [0, 1]");
  }
  if (!(kernel_width > 0.0) || !std::isfinite(kernel_width)) {
    throw InvalidArgument("kernel_width must be > 0");
  }
}

PerturbationSet::PerturbationSet(int n, int k, std::vector<std::uint8_t> bits,
                                 std::vector<double> weights, std::uint64_t seed)
    : n_(n), k_(k), bits_(std::move(bits)), weights_(std::move(weights)), seed_(seed) {
  if (n < 1 || k < 1 || bits_.size() != static_cast<std::size_t>(n) * k ||
      weights_.size() != static_cast<std::size_t>(n)) {
    throw InvalidArgument("perturbation set: inconsistent shape");
  }
}

double PerturbationSet::active_fraction() const {
  std::size_t active = 0;
  for (auto b : bits_) active += b;
  return static_cast<double>(active) / static_cast<double>(bits_.size());
}

std::string PerturbationSet::to_csv() const {
  std::string out;
  out.reserve(bits_.size() * 2 + 16 * k_);
  for (int j = 0; j < k_; ++j) {
    if (j) out += ',';
    out += "sp" + std::to_string(j);
  }
  out += '\n';
  for (int i = 0; i < n_; ++i) {
    for (int j = 0; j < k_; ++j) {
      if (j) out += ',';
      out += bits_[static_cast<std::size_t>(i) * k_ + j] ? '1' : '0';
    }
    out += '\n';
  }
  return out;
}

PerturbationSet sample_masks(const PerturbConfig& cfg, int k) {
  cfg.validate();
  if (k < 1) throw InvalidArgument("sample_masks: k must be >= 1");

  Xoshiro256 rng(cfg.seed);
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(cfg.n_samples) * k);
  for (auto& b : bits) b = rng.uniform() < cfg.p_blackout ? 0 : 1;
  if (cfg.anchor) std::fill(bits.begin(), bits.begin() + k, 1);

  std::vector<double> weights(cfg.n_samples);
  for (int i = 0; i < cfg.n_samples; ++i) {
    weights[i] = locality_weight(
        std::span<const std::uint8_t>(bits).subspan(static_cast<std::size_t>(i) * k, k),
        cfg.kernel_width);
  }
  return PerturbationSet(cfg.n_samples, k, std::move(bits), std::move(weights),
                         cfg.seed);
}

double locality_weight(std::span<const std::uint8_t> mask, double kernel_width) {
  if (mask.empty()) throw InvalidArgument("locality_weight: empty mask");
  std::size_t active = 0;
  for (auto b : mask) active += (b != 0);
  const double d =
      1.0 - std::sqrt(static_cast<double>(active) / static_cast<double>(mask.size()));
  return std::exp(-(d * d) / (kernel_width * kernel_width));
}

Image apply_mask(const Image& img, const SuperpixelMap& sp,
                 std::span<const std::uint8_t> mask, const Fill& fill) {
  if (sp.width() != img.width() || sp.height() != img.height()) {
    throw InvalidArgument("apply_mask: superpixel map and image dimensions differ");
  }
  if (mask.size() != static_cast<std::size_t>(sp.count())) {
    throw InvalidArgument("apply_mask: mask length " + std::to_string(mask.size()) +
                          " != superpixel count " + std::to_string(sp.count()));
  }
  Image out = img;
  const auto labels = sp.labels();
  for (std::size_t p = 0; p < labels.size(); ++p) {
    if (!mask[labels[p]]) out.fill_pixel(p, fill);
  }
  return out;
}

}  // namespace vlime
