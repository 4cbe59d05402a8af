#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vlime/embedding.hpp"
#include "vlime/perturbation.hpp"
#include "vlime/raster.hpp"
#include "vlime/segmentation.hpp"

namespace vlime {

struct ExplainConfig {
  int k_target = 75;
  int n_samples = 1000;
  double p_blackout = 0.6;
  double sigma = 4.0;
  double kernel_width = 0.25;
  double ridge_lambda = 1e-3;
  Fill fill{};
  std::uint64_t seed = 0;
  bool flip_average = false;
  double compactness = 10.0;
  int slic_iterations = 10;
  // Worker threads for the perturbation loop. Embedders that are not
  // concurrent always run on one thread.
  int workers = 1;

  void validate() const;
  SlicParams slic() const { return {k_target, compactness, slic_iterations}; }
  PerturbConfig perturb() const;
};

struct SurrogateFit {
  std::vector<double> coefficients;
  double intercept = 0.0;
  std::vector<double> responses;
  std::vector<double> weights;
  double r_squared = 0.0;  // weighted
  std::vector<std::string> warnings;
};

/// Row-major n x k design matrix.
struct DesignMatrix {
  std::span<const double> values;
  int rows = 0;
  int cols = 0;

  double operator()(int i, int j) const {
    return values[static_cast<std::size_t>(i) * cols + j];
  }
};

/// Weighted ridge regression with an unpenalized intercept:
///
///   min  sum_i w_i (y_i - b0 - x_i . b)^2 + lambda |b|^2
///
/// Solved on weighted-centered data, (Xc' W Xc + lambda I) b = Xc' W yc, by
/// Cholesky factorization; b0 = mean_w(y) - mean_w(x) . b.
/// Throws NumericalError if the system is singular (lambda == 0 with a
/// rank-deficient design).
SurrogateFit fit_weighted_ridge(const DesignMatrix& x, std::span<const double> y,
                                std::span<const double> w, double lambda);

/// Same, with the binary masks of a perturbation set as the design.
SurrogateFit fit_weighted_ridge(const PerturbationSet& masks, std::span<const double> y,
                                double lambda);

struct Explanation {
  Heatmap heatmap;           // smoothed and scaled to [0,1]
  Heatmap coefficient_map;   // per-pixel coefficient before smoothing
  SurrogateFit fit;
  SuperpixelMap segmentation;
  PerturbationSet masks;
  std::size_t queries = 0;   // model evaluations performed
};

/// Every pixel takes the coefficient of its superpixel.
Heatmap paint_coefficients(const SuperpixelMap& sp, std::span<const double> coefficients);

/// Embedding-similarity explanation: the response of perturbation i is
/// cosine_similarity(embed(img), embed(apply_mask(img, mask_i))), or 0 when
/// the perturbed embedding is the zero vector.
Explanation explain(const Image& img, const Embedder& embedder, const ExplainConfig& cfg);

/// Pair variant: responses are cosine_similarity(reference, embed(perturbed)),
/// e.g. the enrolled template of another image.
Explanation explain_pair(const Image& img, const Embedding& reference,
                         const Embedder& embedder, const ExplainConfig& cfg);

/// Original LIME: the response is the probe's scalar score of the perturbed
/// image. With workers > 1 the probe must be thread-safe.
Explanation explain_scalar(const Image& img, const ScalarProbe& probe,
                           const ExplainConfig& cfg);

}  // namespace vlime
