#include "vlime/surrogate.hpp"

#include <atomic>
#include <cmath>
#include <functional>
#include <string>

#include "vlime/error.hpp"
#include "vlime/parallel.hpp"

namespace vlime {

void ExplainConfig::validate() const {
  if (k_target < 1) throw InvalidArgument("k_target must be >= 1");
  if (!(sigma >= 0.0)) throw InvalidArgument("sigma must be >= 0");
  if (!(ridge_lambda >= 0.0) || !std::isfinite(ridge_lambda)) {
    throw InvalidArgument("ridge_lambda must be >= 0");
  }
  if (!(compactness > 0.0)) throw InvalidArgument("compactness must be > 0");
  if (slic_iterations < 1) throw InvalidArgument("slic_iterations must be >= 1");
  if (workers < 1) throw InvalidArgument("workers must be >= 1");
  perturb().validate();
}

PerturbConfig ExplainConfig::perturb() const {
  PerturbConfig p;
  p.n_samples = n_samples;
  p.p_blackout = p_blackout;
  p.fill = fill;
  p.kernel_width = kernel_width;
  p.seed = seed;
  p.anchor = true;
  return p;
}

SurrogateFit fit_weighted_ridge(const DesignMatrix& x, std::span<const double> y,
                                std::span<const double> w, double lambda) {
  const int n = x.rows;
  const int k = x.cols;
  if (n < 1 || k < 1 || x.values.size() != static_cast<std::size_t>(n) * k) {
    throw InvalidArgument("fit_weighted_ridge: design matrix shape is inconsistent");
  }
  if (y.size() != static_cast<std::size_t>(n) || w.size() != static_cast<std::size_t>(n)) {
    throw InvalidArgument("fit_weighted_ridge: y and w must have one entry per row");
  }
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw InvalidArgument("fit_weighted_ridge: lambda must be >= 0");
  }
  for (int i = 0; i < n; ++i) {
    if (!(w[i] > 0.0) || !std::isfinite(w[i])) {
      throw InvalidArgument("fit_weighted_ridge: weights must be positive and finite");
    }
    if (!std::isfinite(y[i])) throw NumericalError("fit_weighted_ridge: non-finite response");
  }

  SurrogateFit fit;
  if (n < k + 1) {
    fit.warnings.push_back("fewer samples (" + std::to_string(n) +
                           ") than coefficients + 1 (" + std::to_string(k + 1) + ")");
  }

  double w_sum = 0.0;
  double y_mean = 0.0;
  std::vector<double> x_mean(k, 0.0);
  for (int i = 0; i < n; ++i) {
    w_sum += w[i];
    y_mean += w[i] * y[i];
    for (int j = 0; j < k; ++j) x_mean[j] += w[i] * x(i, j);
  }
  y_mean /= w_sum;
  for (auto& m : x_mean) m /= w_sum;

  // Normal equations on centered data; only the lower triangle is filled.
  std::vector<double> a(static_cast<std::size_t>(k) * k, 0.0);
  std::vector<double> b(k, 0.0);
  std::vector<double> xc(k);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < k; ++j) xc[j] = x(i, j) - x_mean[j];
    const double yc = y[i] - y_mean;
    for (int j = 0; j < k; ++j) {
      const double wx = w[i] * xc[j];
      b[j] += wx * yc;
      double* row = a.data() + static_cast<std::size_t>(j) * k;
      for (int l = 0; l <= j; ++l) row[l] += wx * xc[l];
    }
  }
  double max_diag = 0.0;
  for (int j = 0; j < k; ++j) {
    a[static_cast<std::size_t>(j) * k + j] += lambda;
    max_diag = std::max(max_diag, a[static_cast<std::size_t>(j) * k + j]);
  }

  // In-place Cholesky, A = L L'.
  const double tiny = std::max(max_diag, 1e-300) * 1e-13;
  for (int j = 0; j < k; ++j) {
    double* row_j = a.data() + static_cast<std::size_t>(j) * k;
    double d = row_j[j];
    for (int l = 0; l < j; ++l) d -= row_j[l] * row_j[l];
    if (!(d > tiny)) {
      throw NumericalError(
          "fit_weighted_ridge: normal equations are singular (rank-deficient design"
          " with lambda = " + std::to_string(lambda) + ")");
    }
    const double ljj = std::sqrt(d);
    row_j[j] = ljj;
    for (int r = j + 1; r < k; ++r) {
      double* row_r = a.data() + static_cast<std::size_t>(r) * k;
      double s = row_r[j];
      for (int l = 0; l < j; ++l) s -= row_r[l] * row_j[l];
      row_r[j] = s / ljj;
    }
  }
  std::vector<double> beta(b);
  for (int j = 0; j < k; ++j) {
    const double* row_j = a.data() + static_cast<std::size_t>(j) * k;
    double s = beta[j];
    for (int l = 0; l < j; ++l) s -= row_j[l] * beta[l];
    beta[j] = s / row_j[j];
  }
  for (int j = k - 1; j >= 0; --j) {
    double s = beta[j];
    for (int r = j + 1; r < k; ++r) s -= a[static_cast<std::size_t>(r) * k + j] * beta[r];
    beta[j] = s / a[static_cast<std::size_t>(j) * k + j];
  }

  double intercept = y_mean;
  for (int j = 0; j < k; ++j) intercept -= x_mean[j] * beta[j];

  double ss_res = 0.0;
  double ss_tot = 0.0;
  for (int i = 0; i < n; ++i) {
    double pred = intercept;
    for (int j = 0; j < k; ++j) pred += x(i, j) * beta[j];
    ss_res += w[i] * (y[i] - pred) * (y[i] - pred);
    ss_tot += w[i] * (y[i] - y_mean) * (y[i] - y_mean);
  }
  fit.coefficients = std::move(beta);
  fit.intercept = intercept;
  fit.responses.assign(y.begin(), y.end());
  fit.weights.assign(w.begin(), w.end());
  fit.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0;
  return fit;
}

SurrogateFit fit_weighted_ridge(const PerturbationSet& masks, std::span<const double> y,
                                double lambda) {
  std::vector<double> design(masks.bits().begin(), masks.bits().end());
  return fit_weighted_ridge(DesignMatrix{design, masks.n(), masks.k()}, y, masks.weights(),
                            lambda);
}

Heatmap paint_coefficients(const SuperpixelMap& sp, std::span<const double> coefficients) {
  if (coefficients.size() != static_cast<std::size_t>(sp.count())) {
    throw InvalidArgument("paint_coefficients: one coefficient per superpixel required");
  }
  Heatmap map(sp.width(), sp.height());
  const auto labels = sp.labels();
  for (std::size_t p = 0; p < labels.size(); ++p) map[p] = coefficients[labels[p]];
  return map;
}

namespace {

using ResponseFn = std::function<double(const Image&)>;

Explanation run_explanation(const Image& img, const ExplainConfig& cfg, int workers,
                            const ResponseFn& response) {
  cfg.validate();
  SuperpixelMap sp = slic_segment(img, cfg.slic());
  PerturbationSet masks = sample_masks(cfg.perturb(), sp.count());

  std::vector<double> responses(masks.n());
  std::atomic<std::size_t> completed{0};
  try {
    parallel_for(static_cast<std::size_t>(masks.n()), static_cast<std::size_t>(workers),
                 [&](std::size_t i) {
                   const Image perturbed =
                       apply_mask(img, sp, masks.row(static_cast<int>(i)), cfg.fill);
                   responses[i] = response(perturbed);
                   completed.fetch_add(1, std::memory_order_relaxed);
                 });
  } catch (const EmbedderError& e) {
    throw EmbedderError(std::string(e.what()) + " (after " +
                        std::to_string(completed.load()) + " of " +
                        std::to_string(masks.n()) + " model queries)");
  }

  SurrogateFit fit = fit_weighted_ridge(masks, responses, cfg.ridge_lambda);
  Heatmap coefficient_map = paint_coefficients(sp, fit.coefficients);
  Heatmap heatmap = normalize_01(gaussian_smooth(coefficient_map, cfg.sigma));
  const auto queries = static_cast<std::size_t>(masks.n());
  return Explanation{std::move(heatmap), std::move(coefficient_map), std::move(fit),
                     std::move(sp), std::move(masks), queries};
}

Embedding explain_embed(const Embedder& embedder, const Image& img, bool flip_average) {
  return flip_average ? flip_averaged_descriptor(embedder, img) : embed(embedder, img);
}

}  // namespace

Explanation explain_pair(const Image& img, const Embedding& reference,
                         const Embedder& embedder, const ExplainConfig& cfg) {
  const int workers = embedder.concurrent() ? cfg.workers : 1;
  if (!(norm(reference) >= 1e-12)) {
    throw NumericalError("explain: the reference embedding has zero norm");
  }
  return run_explanation(img, cfg, workers, [&](const Image& perturbed) {
    const Embedding e = explain_embed(embedder, perturbed, cfg.flip_average);
    // A perturbation can wipe out every feature (e.g. all superpixels filled
    // under a synthetic embedder); it then shares nothing with the reference.
    if (!(norm(e) >= 1e-12)) return 0.0;
    return cosine_similarity(reference, e);
  });
}

Explanation explain(const Image& img, const Embedder& embedder, const ExplainConfig& cfg) {
  cfg.validate();
  const Embedding reference = explain_embed(embedder, img, cfg.flip_average);
  Explanation out = explain_pair(img, reference, embedder, cfg);
  out.queries += 1;
  return out;
}

Explanation explain_scalar(const Image& img, const ScalarProbe& probe,
                           const ExplainConfig& cfg) {
  if (!probe) throw InvalidArgument("explain_scalar: empty probe");
  return run_explanation(img, cfg, cfg.workers, [&](const Image& perturbed) {
    return scalar_probe(probe, perturbed);
  });
}

}  // namespace vlime
