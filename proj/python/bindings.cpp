#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <sstream>

#include "vlime/ablation.hpp"
#include "vlime/cli.hpp"
#include "vlime/embedding.hpp"
#include "vlime/error.hpp"
#include "vlime/image_io.hpp"
#include "vlime/perturbation.hpp"
#include "vlime/raster.hpp"
#include "vlime/segmentation.hpp"
#include "vlime/surrogate.hpp"
#include "vlime/verification.hpp"

namespace py = pybind11;
using namespace vlime;

namespace {

using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// (H, W) or (H, W, C) uint8 -> Image.
Image to_image(const U8Array& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw InvalidArgument("image array must be HxW or HxWxC");
  const int h = static_cast<int>(a.shape(0));
  const int w = static_cast<int>(a.shape(1));
  const int c = a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1;
  return Image(w, h, c, std::vector<std::uint8_t>(a.data(), a.data() + a.size()));
}

U8Array from_image(const Image& img) {
  U8Array out({img.height(), img.width(), img.channels()});
  std::memcpy(out.mutable_data(), img.data().data(), img.data().size());
  return out;
}

Heatmap to_heatmap(const F64Array& a) {
  if (a.ndim() != 2) throw InvalidArgument("heatmap array must be HxW");
  return Heatmap(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)),
                 std::vector<double>(a.data(), a.data() + a.size()));
}

F64Array from_heatmap(const Heatmap& m) {
  F64Array out({m.height(), m.width()});
  std::memcpy(out.mutable_data(), m.values().data(), m.size() * sizeof(double));
  return out;
}

py::array_t<int> labels_array(const SuperpixelMap& sp) {
  py::array_t<int> out({sp.height(), sp.width()});
  std::memcpy(out.mutable_data(), sp.labels().data(), sp.labels().size() * sizeof(int));
  return out;
}

Fill to_fill(const std::array<int, 3>& f) {
  for (int v : f) {
    if (v < 0 || v > 255) throw InvalidArgument("fill values must lie in [0, 255]");
  }
  return Fill{static_cast<std::uint8_t>(f[0]), static_cast<std::uint8_t>(f[1]),
              static_cast<std::uint8_t>(f[2])};
}

// A Python callable image -> sequence of floats, used as a black-box model.
class PyEmbedder final : public Embedder {
 public:
  PyEmbedder(py::function fn, std::size_t dim, std::string name)
      : fn_(std::move(fn)), desc_{std::move(name), dim, EmbedderKind::kBridge, {}} {}

  const EmbedderDescriptor& descriptor() const override { return desc_; }
  Embedding embed(const Image& img) const override {
    py::gil_scoped_acquire gil;
    try {
      return Embedding{fn_(from_image(img)).cast<std::vector<double>>()};
    } catch (const py::error_already_set& e) {
      throw EmbedderError(std::string("python embedder raised: ") + e.what());
    } catch (const py::cast_error& e) {
      throw EmbedderError(std::string("python embedder returned a non-numeric result: ") + e.what());
    }
  }
  bool concurrent() const override { return false; }

 private:
  py::function fn_;
  EmbedderDescriptor desc_;
};

std::shared_ptr<const Embedder> resolve_embedder(const py::object& obj) {
  if (py::isinstance<py::str>(obj)) return cli::make_embedder(obj.cast<std::string>());
  return obj.cast<std::shared_ptr<const Embedder>>();
}

ExplainConfig make_config(int k_target, int n_samples, double p_blackout, double sigma,
                          double kernel_width, double ridge_lambda, std::uint64_t seed,
                          bool flip_average, int workers, std::optional<std::array<int, 3>> fill) {
  ExplainConfig cfg;
  cfg.k_target = k_target;
  cfg.n_samples = n_samples;
  cfg.p_blackout = p_blackout;
  cfg.sigma = sigma;
  cfg.kernel_width = kernel_width;
  cfg.ridge_lambda = ridge_lambda;
  cfg.seed = seed;
  cfg.flip_average = flip_average;
  cfg.workers = workers;
  if (fill) cfg.fill = to_fill(*fill);
  return cfg;
}

py::dict explanation_dict(const Explanation& ex) {
  py::dict d;
  d["heatmap"] = from_heatmap(ex.heatmap);
  d["coefficient_map"] = from_heatmap(ex.coefficient_map);
  d["coefficients"] = ex.fit.coefficients;
  d["intercept"] = ex.fit.intercept;
  d["r_squared"] = ex.fit.r_squared;
  d["responses"] = ex.fit.responses;
  d["weights"] = ex.fit.weights;
  d["warnings"] = ex.fit.warnings;
  d["labels"] = labels_array(ex.segmentation);
  d["k_actual"] = ex.segmentation.count();
  d["queries"] = ex.queries;
  return d;
}

#define EXPLAIN_ARGS                                                                          \
  py::arg("k_target") = 75, py::arg("n_samples") = 1000, py::arg("p_blackout") = 0.6,          \
      py::arg("sigma") = 4.0, py::arg("kernel_width") = 0.25, py::arg("ridge_lambda") = 1e-3, \
      py::arg("seed") = 0, py::arg("flip_average") = false, py::arg("workers") = 1,           \
      py::arg("fill") = py::none()

ScoreSet score_set(const std::vector<double>& genuine, const std::vector<double>& impostor) {
  ScoreSet s;
  for (std::size_t i = 0; i < genuine.size(); ++i) s.genuine.push_back({Pair{0, 0, 0, i}, genuine[i]});
  for (std::size_t i = 0; i < impostor.size(); ++i) s.impostor.push_back({Pair{0, 0, 1, i}, impostor[i]});
  return s;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of vlime";
  m.attr("__version__") = cli::kVersion;

  py::register_exception<DataError>(m, "DataError", PyExc_OSError);
  py::register_exception<EmbedderError>(m, "EmbedderError", PyExc_RuntimeError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const InvalidArgument& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  // raster
  m.def("psnr", [](const F64Array& a, const F64Array& b) { return psnr(to_heatmap(a), to_heatmap(b)); },
        py::arg("a"), py::arg("b"));
  m.def("gaussian_smooth",
        [](const F64Array& a, double sigma) { return from_heatmap(gaussian_smooth(to_heatmap(a), sigma)); },
        py::arg("heatmap"), py::arg("sigma"));
  m.def("normalize_01", [](const F64Array& a) { return from_heatmap(normalize_01(to_heatmap(a))); },
        py::arg("heatmap"));
  m.def("average_heatmaps", [](const std::vector<F64Array>& maps) {
    std::vector<Heatmap> hs;
    for (const auto& a : maps) hs.push_back(to_heatmap(a));
    return from_heatmap(average_heatmaps(hs));
  }, py::arg("heatmaps"));
  m.def("flip_horizontal", [](const U8Array& a) { return from_image(flip_horizontal(to_image(a))); },
        py::arg("image"));

  // image_io
  m.def("read_image", [](const std::filesystem::path& p) { return from_image(io::read_image(p)); },
        py::arg("path"));
  m.def("write_image",
        [](const std::filesystem::path& p, const U8Array& a) { io::write_image(p, to_image(a)); },
        py::arg("path"), py::arg("image"));
  m.def("read_heatmap", [](const std::filesystem::path& p) { return from_heatmap(io::read_heatmap(p)); },
        py::arg("path"));
  m.def("write_heatmap",
        [](const std::filesystem::path& p, const F64Array& a) { io::write_heatmap(p, to_heatmap(a)); },
        py::arg("path"), py::arg("heatmap"));

  // segmentation
  m.def("slic", [](const U8Array& a, int k_target, double compactness, int iterations) {
    return labels_array(slic_segment(to_image(a), SlicParams{k_target, compactness, iterations}));
  }, py::arg("image"), py::arg("k_target") = 75, py::arg("compactness") = 10.0,
        py::arg("iterations") = 10);

  // perturbation
  m.def("sample_masks", [](int n_samples, int k, double p_blackout, double kernel_width,
                           std::uint64_t seed, bool anchor) {
    PerturbConfig cfg;
    cfg.n_samples = n_samples;
    cfg.p_blackout = p_blackout;
    cfg.kernel_width = kernel_width;
    cfg.seed = seed;
    cfg.anchor = anchor;
    const auto set = sample_masks(cfg, k);
    py::array_t<std::uint8_t> bits({set.n(), set.k()});
    std::memcpy(bits.mutable_data(), set.bits().data(), set.bits().size());
    return py::make_tuple(bits, std::vector<double>(set.weights().begin(), set.weights().end()));
  }, py::arg("n_samples"), py::arg("k"), py::arg("p_blackout") = 0.6,
        py::arg("kernel_width") = 0.25, py::arg("seed") = 0, py::arg("anchor") = true,
        "Returns (masks[n, k] uint8, locality weights).");

  // embedding
  py::class_<Embedder, std::shared_ptr<Embedder>>(m, "Embedder")
      .def_property_readonly("name", [](const Embedder& e) { return e.descriptor().name; })
      .def_property_readonly("dim", [](const Embedder& e) { return e.descriptor().dim; })
      .def("embed", [](const Embedder& e, const U8Array& a) { return embed(e, to_image(a)).values; },
           py::arg("image"));
  py::class_<PyEmbedder, Embedder, std::shared_ptr<PyEmbedder>>(m, "PythonEmbedder")
      .def(py::init<py::function, std::size_t, std::string>(), py::arg("fn"), py::arg("dim"),
           py::arg("name") = "python");
  m.def("make_embedder", [](const std::string& spec) {
    return std::const_pointer_cast<Embedder>(cli::make_embedder(spec));
  }, py::arg("spec"), "Builds a builtin or bridge embedder from a spec string such as 'region:zone=1'.");
  m.def("cosine_similarity", [](const std::vector<double>& u, const std::vector<double>& v) {
    return cosine_similarity(Embedding{u}, Embedding{v});
  }, py::arg("u"), py::arg("v"));

  // surrogate
  m.def("fit_weighted_ridge", [](const F64Array& x, const std::vector<double>& y,
                                 const std::vector<double>& w, double lambda) {
    if (x.ndim() != 2) throw InvalidArgument("design matrix must be 2-D");
    const auto fit = fit_weighted_ridge(
        DesignMatrix{std::span<const double>(x.data(), x.size()), static_cast<int>(x.shape(0)),
                     static_cast<int>(x.shape(1))},
        y, w, lambda);
    py::dict d;
    d["coefficients"] = fit.coefficients;
    d["intercept"] = fit.intercept;
    d["r_squared"] = fit.r_squared;
    d["warnings"] = fit.warnings;
    return d;
  }, py::arg("x"), py::arg("y"), py::arg("w"), py::arg("ridge_lambda"));

  m.def("explain", [](const U8Array& a, const py::object& embedder, int k_target, int n_samples,
                      double p_blackout, double sigma, double kernel_width, double ridge_lambda,
                      std::uint64_t seed, bool flip_average, int workers,
                      std::optional<std::array<int, 3>> fill) {
    const auto e = resolve_embedder(embedder);
    const Image img = to_image(a);
    ExplainConfig cfg = make_config(k_target, n_samples, p_blackout, sigma, kernel_width,
                                    ridge_lambda, seed, flip_average, workers, fill);
    if (!fill) cfg.fill = e->descriptor().preferred_fill;
    std::optional<Explanation> ex;
    {
      py::gil_scoped_release release;
      ex.emplace(explain(img, *e, cfg));
    }
    return explanation_dict(*ex);
  }, py::arg("image"), py::arg("embedder"), EXPLAIN_ARGS,
        "Embedding-similarity explanation. `embedder` is a spec string or an Embedder.");

  m.def("explain_scalar", [](const U8Array& a, py::function probe, int k_target, int n_samples,
                             double p_blackout, double sigma, double kernel_width,
                             double ridge_lambda, std::uint64_t seed, bool flip_average, int,
                             std::optional<std::array<int, 3>> fill) {
    const ExplainConfig cfg = make_config(k_target, n_samples, p_blackout, sigma, kernel_width,
                                          ridge_lambda, seed, flip_average, 1, fill);
    const ScalarProbe fn = [&probe](const Image& img) {
      try {
        return probe(from_image(img)).cast<double>();
      } catch (const py::error_already_set& e) {
        throw EmbedderError(std::string("python probe raised: ") + e.what());
      }
    };
    return explanation_dict(explain_scalar(to_image(a), fn, cfg));
  }, py::arg("image"), py::arg("probe"), EXPLAIN_ARGS,
        "Original LIME: `probe(image) -> float in [0, 1]`. Runs on one thread.");

  // verification
  m.def("eer", [](const std::vector<double>& genuine, const std::vector<double>& impostor) {
    const auto r = eer(genuine, impostor);
    py::dict d;
    d["eer_percent"] = r.eer_percent;
    d["threshold"] = r.threshold;
    d["far"] = r.far;
    d["frr"] = r.frr;
    return d;
  }, py::arg("genuine"), py::arg("impostor"));
  m.def("fuse_scores", &fuse_scores, py::arg("s1"), py::arg("s2"), py::arg("a"));
  m.def("fusion_sweep", [](const std::vector<double>& genuine1, const std::vector<double>& impostor1,
                           const std::vector<double>& genuine2, const std::vector<double>& impostor2,
                           double step) {
    const auto sweep = fusion_sweep(score_set(genuine1, impostor1), score_set(genuine2, impostor2), step);
    std::vector<std::pair<double, double>> rows;
    for (const auto& p : sweep.points) rows.emplace_back(p.a, p.eer_percent);
    return py::make_tuple(rows, sweep.best);
  }, py::arg("genuine1"), py::arg("impostor1"), py::arg("genuine2"), py::arg("impostor2"),
        py::arg("step") = 0.02, "Returns ([(a, eer_percent), ...], index of the best row).");

  // ablation
  m.def("blackout_above_threshold", [](const U8Array& a, const F64Array& map, double t,
                                       std::array<int, 3> fill) {
    const auto r = blackout_above_threshold(to_image(a), to_heatmap(map), t, to_fill(fill));
    return py::make_tuple(from_image(r.image), r.removed);
  }, py::arg("image"), py::arg("heatmap"), py::arg("threshold"),
        py::arg("fill") = std::array<int, 3>{0, 0, 0});
  m.def("random_blackout", [](const U8Array& a, std::size_t count, std::array<int, 3> fill,
                              std::uint64_t seed) {
    return from_image(random_blackout(to_image(a), count, to_fill(fill), seed));
  }, py::arg("image"), py::arg("count"), py::arg("fill") = std::array<int, 3>{0, 0, 0},
        py::arg("seed") = 0);

  // cli
  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    int code = 0;
    {
      py::gil_scoped_release release;
      code = cli::run(args, out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
  }, py::arg("args"), "Runs a vlime command in-process; returns (exit_code, stdout, stderr).");
}
