// Acceptance suite: one PASS/FAIL line per primary criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "vlime/ablation.hpp"
#include "vlime/cli.hpp"
#include "vlime/error.hpp"
#include "vlime/image_io.hpp"
#include "vlime/perturbation.hpp"
#include "vlime/raster.hpp"
#include "vlime/segmentation.hpp"
#include "vlime/surrogate.hpp"
#include "vlime/verification.hpp"

namespace fs = std::filesystem;
using namespace vlime;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string format(const char* fmt, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), fmt, a, b, c);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome ridge_oracle() {
  std::mt19937_64 rng(1001);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double lambdas[] = {0.0, 1e-3, 1.0};
  double worst = 0;
  int solved = 0;
  for (int inst = 0; inst < 1000; ++inst) {
    const double lambda = lambdas[inst % 3];
    const int k = 1 + static_cast<int>(rng() % 20);
    const int n_min = lambda == 0.0 ? 2 * (k + 1) : 2;
    const int n = n_min + static_cast<int>(rng() % (200 - n_min + 1));
    std::vector<double> x(static_cast<std::size_t>(n) * k), y(n), w(n);
    std::optional<oracle::RidgeSolution> ref;
    for (int attempt = 0; attempt < 100; ++attempt) {
      for (auto& v : x) v = u(rng) < 0.6 ? 0.0 : 1.0;
      for (auto& v : y) v = u(rng);
      for (auto& v : w) v = 0.01 + u(rng);
      ref = oracle::ridge(x, n, k, y, w, lambda);
      if (ref && ref->min_pivot_ratio > 1e-6) break;
      ref.reset();
    }
    if (!ref) return {false, "could not draw a non-singular instance"};
    const auto fit = fit_weighted_ridge(DesignMatrix{x, n, k}, y, w, lambda);
    long double scale = 0, diff = 0;
    for (int j = 0; j < k; ++j) {
      scale = std::max(scale, std::fabs(ref->coefficients[j]));
      diff = std::max(diff, std::fabs(fit.coefficients[j] - ref->coefficients[j]));
    }
    const double coef_rel = scale > 0 ? static_cast<double>(diff / scale) : static_cast<double>(diff);
    const double icpt_rel = static_cast<double>(std::fabs(fit.intercept - ref->intercept) /
                                                std::max<long double>(std::fabs(ref->intercept), 1e-300L));
    worst = std::max({worst, coef_rel, icpt_rel});
    ++solved;
  }
  return {worst <= 1e-8 && solved == 1000,
          format("%.0f instances, max relative error %.3g (limit 1e-8)", solved, worst)};
}

// ---------------------------------------------------------------------------

Outcome eer_oracle() {
  const double sep = eer(std::vector<double>{0.9, 0.8}, std::vector<double>{0.1, 0.2}).eer_percent;
  const double same = eer(std::vector<double>{0.5}, std::vector<double>{0.5}).eer_percent;
  const auto r3 = eer(std::vector<double>{0.9, 0.6, 0.4}, std::vector<double>{0.5, 0.3, 0.1});
  const double three = r3.eer_percent;
  const bool analytic = sep == 0.0 && same == 50.0 && r3.far == 1.0 / 3.0 && r3.frr == 1.0 / 3.0 &&
                        three == 50.0 * (1.0 / 3.0 + 1.0 / 3.0) && r3.threshold > 0.4 &&
                        r3.threshold <= 0.5;

  std::mt19937_64 rng(1002);
  double worst = 0;
  for (int set = 0; set < 1000; ++set) {
    const int g = 1 + static_cast<int>(rng() % 200);
    const int im = 1 + static_cast<int>(rng() % 200);
    const int levels = set % 2 ? 20 : 1000000;  // half of the sets are tie-heavy
    std::uniform_int_distribution<int> lv(0, levels);
    std::normal_distribution<double> shift(0.0, 0.2);
    const double offset = std::abs(shift(rng));
    std::vector<double> gs(g), is(im);
    for (auto& v : gs) v = static_cast<double>(lv(rng)) / levels + offset;
    for (auto& v : is) v = static_cast<double>(lv(rng)) / levels;
    worst = std::max(worst, std::abs(eer(gs, is).eer_percent -
                                     oracle::eer_brute_force(gs, is).eer_percent));
  }
  return {analytic && worst <= 1e-9,
          format("analytic %.4g/%.4g/%.4g %%, ", sep, same, three) +
              format("max |eer - brute force| over 1000 sets %.3g (limit 1e-9)", worst)};
}

// ---------------------------------------------------------------------------

Outcome segmentation_properties() {
  std::mt19937_64 rng(1003);
  int bad = 0;
  std::string first_problem;
  for (int i = 0; i < 200; ++i) {
    const int w = 16 + static_cast<int>(rng() % 113);
    const int h = 16 + static_cast<int>(rng() % 113);
    const int k = 1 + static_cast<int>(rng() % 75);
    const Image img = i % 2 ? oracle::random_image(w, h, 3, rng)
                            : oracle::block_image(w, h, 3, 4 + static_cast<int>(rng() % 20), rng, 0, 20);
    const SlicParams params{k, 10.0, 10};
    const SuperpixelMap a = slic_segment(img, params);
    const SuperpixelMap b = slic_segment(img, params);
    std::string problem = oracle::check_partition(a);
    if (problem.empty() && a.count() > k) problem = "k_actual exceeds k_target";
    if (problem.empty() && !std::equal(a.labels().begin(), a.labels().end(), b.labels().begin(), b.labels().end()))
      problem = "two runs differ";
    if (!problem.empty()) {
      if (bad++ == 0) first_problem = problem;
    }
  }
  return {bad == 0, bad == 0 ? "200 images: total 4-connected dense partitions, k_actual <= k_target, deterministic"
                             : format("%.0f of 200 images failed; first: ", bad) + first_problem};
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> zone_flags(int zone, int w, int h) {
  const auto r = RegionEmbedder::zone_rect(zone, w, h);
  std::vector<std::uint8_t> flags(static_cast<std::size_t>(w) * h, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) flags[static_cast<std::size_t>(y) * w + x] = r.contains(x, y);
  }
  return flags;
}

Outcome ground_truth_recovery() {
  std::mt19937_64 rng(1004);
  const auto region = zone_flags(1, 64, 64);
  std::size_t area = 0;
  for (auto f : region) area += f;

  ExplainConfig cfg;
  cfg.k_target = 16;
  cfg.n_samples = 1000;
  cfg.ridge_lambda = 1e-6;
  cfg.seed = 41;
  const Image probe_img = oracle::block_image(64, 64, 3, 16, rng);
  const auto ex = explain_scalar(probe_img, area_fraction_probe(region, Fill{}), cfg);
  std::vector<double> truth(ex.segmentation.count(), 0.0);
  for (std::size_t p = 0; p < region.size(); ++p) {
    if (region[p]) truth[ex.segmentation.labels()[p]] += 1.0 / static_cast<double>(area);
  }
  double slope_err = 0;
  for (int j = 0; j < ex.segmentation.count(); ++j) {
    slope_err = std::max(slope_err, std::abs(ex.fit.coefficients[j] - truth[j]));
  }

  int recovered = 0;
  const RegionEmbedder embedder(1, 10.0);
  ExplainConfig rcfg;
  rcfg.k_target = 16;
  rcfg.n_samples = 1000;
  for (int trial = 0; trial < 100; ++trial) {
    const Image img = oracle::block_image(64, 64, 3, 16, rng);
    rcfg.seed = 5000 + static_cast<std::uint64_t>(trial);
    const auto r = explain(img, embedder, rcfg);
    std::vector<char> overlaps(r.segmentation.count(), 0);
    for (std::size_t p = 0; p < region.size(); ++p) {
      if (region[p]) overlaps[r.segmentation.labels()[p]] = 1;
    }
    double min_in = std::numeric_limits<double>::infinity();
    double max_out = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < r.segmentation.count(); ++j) {
      const double c = r.fit.coefficients[j];
      if (overlaps[j]) {
        min_in = std::min(min_in, c);
      } else {
        max_out = std::max(max_out, c);
      }
    }
    recovered += min_in > max_out;
  }
  return {slope_err <= 1e-6 && recovered >= 95,
          format("area-probe max slope error %.3g (limit 1e-6); region gain 10 top ranks in %.0f/100 "
                 "trials (need 95)",
                 slope_err, recovered)};
}

// ---------------------------------------------------------------------------

Outcome scale_invariance() {
  std::mt19937_64 rng(1005);
  int identical = 0;
  for (int run = 0; run < 20; ++run) {
    ExplainConfig cfg;
    cfg.k_target = 16 + run;
    cfg.n_samples = 300;
    cfg.seed = static_cast<std::uint64_t>(run);
    std::shared_ptr<const Embedder> base;
    Image img;
    if (run % 2) {
      base = std::make_shared<ProjectionEmbedder>(static_cast<std::uint64_t>(run), 64);
      img = oracle::random_image(48, 40, 3, rng);
    } else {
      base = std::make_shared<RegionEmbedder>(run % 8, 10.0);
      img = oracle::block_image(64, 64, 3, 16, rng);
    }
    const ScaledEmbedder scaled(base, 7.3);
    identical += explain(img, *base, cfg).heatmap == explain(img, scaled, cfg).heatmap;
  }
  return {identical == 20, format("%.0f/20 seeded runs bit-identical under x7.3 output scaling", identical)};
}

// ---------------------------------------------------------------------------

Outcome mask_statistics() {
  PerturbConfig cfg;
  cfg.n_samples = 1000;
  cfg.p_blackout = 0.6;
  cfg.seed = 1006;
  const double f = sample_masks(cfg, 75).active_fraction();
  return {std::abs(f - 0.40) <= 0.01, format("mean active fraction %.5f (target 0.40 +- 0.01)", f)};
}

// ---------------------------------------------------------------------------

// 25 subjects x 4 images. Identity lives in the tiles of zone R; every other
// tile is redrawn per image.
struct RegionBench {
  DatasetManifest manifest;
  std::vector<Image> images;
};

RegionBench region_bench(std::mt19937_64& rng, int zone) {
  const int size = 64;
  const int block = 16;
  const auto rect = RegionEmbedder::zone_rect(zone, size, size);
  std::uniform_int_distribution<int> level(60, 255);
  std::uniform_int_distribution<int> jitter(-6, 6);
  RegionBench b;
  std::vector<Subject> subjects;
  for (int s = 0; s < 25; ++s) {
    std::vector<int> identity(16);
    for (auto& v : identity) v = level(rng);
    Subject sub{"id" + std::to_string(s), {}};
    for (int i = 0; i < 4; ++i) {
      std::vector<int> tiles(16);
      for (int t = 0; t < 16; ++t) {
        const int tx = (t % 4) * block;
        const int ty = (t / 4) * block;
        tiles[t] = rect.contains(tx, ty) ? std::clamp(identity[t] + jitter(rng), 0, 255) : level(rng);
      }
      Image img(size, size, 3);
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<std::uint8_t>(tiles[(y / block) * 4 + x / block]);
        }
      }
      const std::string path = sub.id + "/" + std::to_string(i) + ".png";
      sub.images.push_back(ImageRef{path, path, Pose::kUntagged});
      b.images.push_back(std::move(img));
    }
    subjects.push_back(std::move(sub));
  }
  b.manifest = DatasetManifest(std::move(subjects));
  return b;
}

Outcome ablation_direction() {
  const int trials = 40;
  std::vector<double> thresholds;
  for (int t = 10; t >= 3; --t) thresholds.push_back(t / 10.0);
  int good = 0;
  std::string first_miss;
  for (int trial = 0; trial < trials; ++trial) {
    std::mt19937_64 rng(2000 + static_cast<std::uint64_t>(trial));
    const int zone = trial % 8;
    const RegionBench bench = region_bench(rng, zone);
    const RegionEmbedder embedder(zone, 10.0);
    ExplainConfig cfg;
    cfg.k_target = 16;
    cfg.workers = 4;
    std::vector<Heatmap> maps;
    for (std::size_t i = 0; i < bench.images.size(); ++i) {
      cfg.seed = derive_seed(static_cast<std::uint64_t>(trial), i);
      maps.push_back(explain(bench.images[i], embedder, cfg).heatmap);
    }
    AblationOptions opts;
    opts.workers = 4;
    const auto reports = ablation_sweep(bench.manifest, bench.images, embedder, maps, thresholds,
                                        Fill{}, static_cast<std::uint64_t>(trial), opts);
    bool ok = reports.back().eer_targeted >= reports.back().eer_random;
    for (const auto& r : reports) {
      if (r.threshold < 0.9 - 1e-12 && !(r.similarity_drop_targeted > r.similarity_drop_random)) ok = false;
    }
    good += ok;
    if (!ok && first_miss.empty()) {
      first_miss = format("; first miss: trial %.0f, final EER targeted %.3g vs random %.3g", trial,
                          reports.back().eer_targeted, reports.back().eer_random);
    }
  }
  const double rate = static_cast<double>(good) / trials;
  return {rate >= 0.95, format("%.0f/%.0f seeded trials (need >= 95%%)", good, trials) + first_miss};
}

// ---------------------------------------------------------------------------

ScoreSet make_set(const std::vector<double>& genuine, const std::vector<double>& impostor) {
  ScoreSet s;
  for (std::size_t i = 0; i < genuine.size(); ++i) s.genuine.push_back({Pair{i, 0, i, 1}, genuine[i]});
  for (std::size_t i = 0; i < impostor.size(); ++i) s.impostor.push_back({Pair{i, 0, i + 1, 1}, impostor[i]});
  return s;
}

Outcome fusion_interior() {
  std::mt19937_64 rng(1008);
  std::normal_distribution<double> noise(0.0, 0.03);
  const int n = 200;
  std::vector<double> g1(n), i1(n), g2(n), i2(n);
  for (int j = 0; j < n; ++j) {
    g1[j] = 0.8 + noise(rng);
    g2[j] = 0.8 + noise(rng);
    i1[j] = 0.2 + noise(rng);
    i2[j] = 0.2 + noise(rng);
  }
  // Each system errs on its own disjoint tenth of the pairs.
  for (int j = 0; j < n / 10; ++j) {
    g1[j] = 0.35 + noise(rng);
    i1[j + n / 10] = 0.65 + noise(rng);
    g2[j + 2 * n / 10] = 0.35 + noise(rng);
    i2[j + 3 * n / 10] = 0.65 + noise(rng);
  }
  const ScoreSet s1 = make_set(g1, i1);
  const ScoreSet s2 = make_set(g2, i2);
  const auto sweep = fusion_sweep(s1, s2, 0.02);
  const double e1 = eer(s1).eer_percent;
  const double e2 = eer(s2).eer_percent;
  const auto& best = sweep.points[sweep.best];
  const bool ok = sweep.points.front().eer_percent == e2 && sweep.points.back().eer_percent == e1 &&
                  best.a > 0.0 && best.a < 1.0 && best.eer_percent < std::min(e1, e2);
  return {ok, format("EER(a=0)=%.4g%%, EER(a=1)=%.4g%%, ", sweep.points.front().eer_percent,
                     sweep.points.back().eer_percent) +
                  format("argmin a=%.2f with EER %.4g%%", best.a, best.eer_percent)};
}

// ---------------------------------------------------------------------------

Outcome psnr_closed_forms() {
  std::mt19937_64 rng(1009);
  Heatmap a(32, 32);
  for (auto& v : a.values()) v = std::uniform_real_distribution<double>(0.0, 0.9)(rng);
  Heatmap b = a;
  for (auto& v : b.values()) v += 0.1;
  const double same = psnr(a, a);
  const double offset = psnr(a, b);
  const double extremes = psnr(Heatmap(32, 32, 0.0), Heatmap(32, 32, 1.0));
  const bool ok = std::isinf(same) && same > 0 && std::abs(offset - 20.0) <= 1e-9 && extremes == 0.0;
  return {ok, format("identical %.17g, 0.1 offset %.12f dB, zeros vs ones %.3g dB", same, offset, extremes)};
}

// ---------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome cli_determinism() {
  const fs::path root = fs::temp_directory_path() / "vlime_acceptance_cli";
  fs::remove_all(root);
  fs::create_directories(root / "img");
  std::mt19937_64 rng(1010);
  std::string manifest = R"({"subjects": [)";
  for (int s = 0; s < 4; ++s) {
    manifest += std::string(s ? "," : "") + R"({"id": "p)" + std::to_string(s) + R"(", "images": [)";
    for (int i = 0; i < 3; ++i) {
      const std::string rel = "img/p" + std::to_string(s) + "_" + std::to_string(i) + ".png";
      io::write_image(root / rel, oracle::block_image(48, 48, 3, 12, rng, 60, 8));
      manifest += std::string(i ? "," : "") + R"({"path": ")" + rel + R"("})";
    }
    manifest += "]}";
  }
  manifest += "]}";
  std::ofstream(root / "manifest.json") << manifest;

  const std::string m = (root / "manifest.json").string();
  std::ostringstream sink;
  for (const char* run : {"run1", "run2"}) {
    const fs::path out = root / run;
    const std::vector<std::vector<std::string>> commands = {
        {"explain", "-m", m, "-e", "region:zone=2", "-n", "200", "-k", "20", "--seed", "17", "--masks",
         "-j", "3", "-o", (out / "heatmaps").string()},
        {"verify", "-m", m, "-e", "projection:seed=4", "-j", "2", "-o", (out / "verify").string()},
        {"ablate", "-m", m, "-e", "region:zone=2", "--heatmaps", (out / "heatmaps").string(),
         "--thresholds", "1.0,0.7,0.4", "--seed", "17", "-j", "2", "-o", (out / "ablate").string()},
    };
    for (const auto& args : commands) {
      const int rc = cli::run(args, sink, sink);
      if (rc != 0) return {false, "command '" + args[0] + "' exited with " + std::to_string(rc) + ": " + sink.str()};
    }
  }
  int compared = 0;
  std::string mismatch;
  for (const auto& entry : fs::recursive_directory_iterator(root / "run1")) {
    const auto ext = entry.path().extension();
    if (!entry.is_regular_file() || (ext != ".csv" && ext != ".hm")) continue;
    const fs::path twin = root / "run2" / fs::relative(entry.path(), root / "run1");
    ++compared;
    if (!fs::exists(twin) || slurp(entry.path()) != slurp(twin)) {
      if (mismatch.empty()) mismatch = fs::relative(entry.path(), root).string();
    }
  }
  fs::remove_all(root);
  const bool ok = mismatch.empty() && compared > 0;
  return {ok, ok ? format("%.0f CSV/.hm artifacts byte-identical across two runs", compared)
                 : "artifact differs: " + mismatch};
}

struct Criterion {
  const char* name;
  double limit_s;  // 0: no runtime limit
  std::function<Outcome()> check;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {"weighted ridge matches dense normal-equations oracle", 10, ridge_oracle},
      {"EER matches brute-force sweep and analytic cases", 5, eer_oracle},
      {"segmentation partition properties", 60, segmentation_properties},
      {"ground-truth explanation recovery", 120, ground_truth_recovery},
      {"heatmaps invariant to output scaling", 0, scale_invariance},
      {"mask statistics", 0, mask_statistics},
      {"ablation direction: targeted beats random", 300, ablation_direction},
      {"fusion endpoints and interior optimum", 0, fusion_interior},
      {"PSNR closed forms", 0, psnr_closed_forms},
      {"end-to-end CLI determinism", 0, cli_determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto& c = criteria[i];
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::string timing = format("%.2fs", secs);
    if (c.limit_s > 0) {
      timing += format(" of %.0fs", c.limit_s);
      if (secs > c.limit_s) o.pass = false;
    }
    failed += !o.pass;
    std::printf("%s  [%zu] %s: %s (%s)\n", o.pass ? "PASS" : "FAIL", i + 1, c.name, o.detail.c_str(),
                timing.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
