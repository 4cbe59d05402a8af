#include "vlime/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "vlime/ablation.hpp"
#include "vlime/bridge.hpp"
#include "vlime/error.hpp"
#include "vlime/image_io.hpp"
#include "vlime/rng.hpp"
#include "vlime/segmentation.hpp"
#include "vlime/surrogate.hpp"
#include "vlime/verification.hpp"

namespace vlime::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Small helpers

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string short_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string sanitize(const std::string& text) {
  std::string out = text;
  for (char& c : out) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '.' || c == '-' || c == '_';
    if (!ok) c = '_';
  }
  return out.empty() ? "_" : out;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(text);
  while (std::getline(in, cur, sep)) parts.push_back(cur);
  if (!text.empty() && text.back() == sep) parts.emplace_back();
  return parts;
}

double parse_real(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw InvalidArgument(what + ": expected a number, got '" + text + "'");
}

long long parse_int(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw InvalidArgument(what + ": expected an integer, got '" + text + "'");
}

std::uint64_t parse_u64(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    if (!text.empty() && text[0] != '-') {
      const unsigned long long v = std::stoull(text, &used, 0);
      if (used == text.size()) return v;
    }
  } catch (const std::exception&) {
  }
  throw InvalidArgument(what + ": expected an unsigned integer, got '" + text + "'");
}

Fill fill_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) throw InvalidArgument("fill must be three values r,g,b");
  std::array<std::uint8_t, 3> v{};
  for (std::size_t i = 0; i < 3; ++i) {
    if (!j[i].is_number_integer() || j[i].get<long long>() < 0 || j[i].get<long long>() > 255) {
      throw InvalidArgument("fill values must be integers in [0, 255]");
    }
    v[i] = static_cast<std::uint8_t>(j[i].get<int>());
  }
  return {v[0], v[1], v[2]};
}

json fill_to_json(const Fill& f) { return json::array({f.r, f.g, f.b}); }

struct Stopwatch {
  json& timings;
  std::string stage;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  ~Stopwatch() {
    const double s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    timings[stage] = timings.value(stage, 0.0) + s;
  }
};

// ---------------------------------------------------------------------------
// Flags and configuration

enum class FlagType { kInt, kU64, kReal, kStr, kBool, kFill, kRealList, kStrList, kRange };

struct FlagDef {
  const char* name;     // CLI11 option name(s)
  const char* pointer;  // JSON pointer into the configuration
  FlagType type;
  const char* help;
};

const FlagDef kSeed{"--seed", "/seed", FlagType::kU64, "master seed"};
const FlagDef kWorkers{"--workers,-j", "/workers", FlagType::kInt, "worker threads"};
const FlagDef kOut{"--out,-o", "/out", FlagType::kStr, "output directory"};
const FlagDef kEmbedderFlag{"--embedder,-e", "/embedder", FlagType::kStr, "embedder spec"};
const FlagDef kEmbedder2Flag{"--embedder2", "/embedder2", FlagType::kStr,
                         "second embedder spec (fusion)"};
const FlagDef kManifest{"--manifest,-m", "/manifest", FlagType::kStr, "dataset manifest JSON"};
const FlagDef kImages{"--image,-i", "/images", FlagType::kStrList, "input image(s)"};
const FlagDef kFillFlag{"--fill", "/fill", FlagType::kFill, "blackout value r,g,b"};
const FlagDef kPose{"--pose", "/pose", FlagType::kStr, "pose filter A:B or overall"};
const FlagDef kKTarget{"--k-target,-k", "/explain/k_target", FlagType::kInt,
                       "target superpixel count"};
const FlagDef kCompactness{"--compactness", "/explain/compactness", FlagType::kReal,
                           "SLIC compactness"};
const FlagDef kIterations{"--slic-iterations", "/explain/slic_iterations", FlagType::kInt,
                          "SLIC iterations"};

const std::vector<FlagDef> kExplainFlags = {
    kKTarget,
    kCompactness,
    kIterations,
    {"--samples,-n", "/explain/n_samples", FlagType::kInt, "perturbation count"},
    {"--p-blackout", "/explain/p_blackout", FlagType::kReal, "superpixel blackout probability"},
    {"--sigma", "/explain/sigma", FlagType::kReal, "Gaussian smoothing sigma (pixels)"},
    {"--kernel-width", "/explain/kernel_width", FlagType::kReal, "locality kernel width"},
    {"--lambda", "/explain/ridge_lambda", FlagType::kReal, "ridge penalty"},
    {"--flip-average", "/explain/flip_average", FlagType::kBool,
     "use flip-averaged embeddings"},
};

json default_config() {
  return json{{"seed", 0},
              {"workers", 1},
              {"out", "."},
              {"explain",
               {{"k_target", 75},
                {"n_samples", 1000},
                {"p_blackout", 0.6},
                {"sigma", 4.0},
                {"kernel_width", 0.25},
                {"ridge_lambda", 1e-3},
                {"compactness", 10.0},
                {"slic_iterations", 10},
                {"flip_average", false}}}};
}

class Command {
 public:
  Command(CLI::App* app, std::string name) : app_(app), name_(std::move(name)) {
    app_->add_option("--config,-c", config_path_, "JSON configuration file");
    add(kSeed);
    add(kWorkers);
    add(kOut);
  }

  void add(const FlagDef& def) {
    defs_.push_back(def);
    auto& slot = raw_[def.pointer];
    CLI::Option* opt = nullptr;
    if (def.type == FlagType::kBool) {
      opt = app_->add_flag(def.name, def.help);
    } else if (def.type == FlagType::kStrList) {
      opt = app_->add_option(def.name, slot, def.help)->expected(1, CLI::detail::expected_max_vector_size);
    } else {
      opt = app_->add_option(def.name, slot, def.help)->expected(1)->multi_option_policy(
          CLI::MultiOptionPolicy::TakeLast);
    }
    options_[def.pointer] = opt;
  }

  void add(const std::vector<FlagDef>& defs) {
    for (const auto& d : defs) add(d);
  }

  CLI::App* app() const { return app_; }
  const std::string& name() const { return name_; }

  // Defaults, then the config file, then explicitly given flags.
  json resolve() const {
    json cfg = default_config();
    if (!config_path_.empty()) {
      std::ifstream in(config_path_);
      if (!in) throw InvalidArgument("cannot read config file " + config_path_);
      json file;
      try {
        file = json::parse(in);
      } catch (const json::exception& e) {
        throw InvalidArgument("config file " + config_path_ + ": " + e.what());
      }
      if (!file.is_object()) throw InvalidArgument("config file must hold a JSON object");
      cfg.merge_patch(file);
    }
    for (const auto& def : defs_) {
      const CLI::Option* opt = options_.at(def.pointer);
      if (opt->count() == 0) continue;
      const json::json_pointer ptr(def.pointer);
      const auto& values = raw_.at(def.pointer);
      const std::string text = values.empty() ? "" : values.back();
      const std::string what = opt->get_name();
      switch (def.type) {
        case FlagType::kInt:
          cfg[ptr] = parse_int(text, what);
          break;
        case FlagType::kU64:
          cfg[ptr] = parse_u64(text, what);
          break;
        case FlagType::kReal:
          cfg[ptr] = parse_real(text, what);
          break;
        case FlagType::kStr:
          cfg[ptr] = text;
          break;
        case FlagType::kBool:
          cfg[ptr] = true;
          break;
        case FlagType::kStrList:
          cfg[ptr] = values;
          break;
        case FlagType::kFill: {
          json arr = json::array();
          for (const auto& p : split(text, ',')) arr.push_back(parse_int(p, what));
          cfg[ptr] = arr;
          break;
        }
        case FlagType::kRealList: {
          json arr = json::array();
          for (const auto& p : split(text, ',')) arr.push_back(parse_real(p, what));
          cfg[ptr] = arr;
          break;
        }
        case FlagType::kRange: {
          const auto parts = split(text, ':');
          if (parts.size() != 2) throw InvalidArgument(what + ": expected LO:HI");
          cfg[ptr] = json::array({parse_real(parts[0], what), parse_real(parts[1], what)});
          break;
        }
      }
    }
    return cfg;
  }

 private:
  CLI::App* app_;
  std::string name_;
  std::string config_path_;
  std::vector<FlagDef> defs_;
  std::map<std::string, std::vector<std::string>> raw_;
  std::map<std::string, CLI::Option*> options_;
};

template <typename T>
T value(const json& cfg, const char* pointer) {
  const json::json_pointer ptr(pointer);
  if (!cfg.contains(ptr)) throw InvalidArgument(std::string("missing setting ") + pointer);
  try {
    return cfg.at(ptr).get<T>();
  } catch (const json::exception&) {
    throw InvalidArgument(std::string("setting ") + pointer + " has the wrong type");
  }
}

bool has(const json& cfg, const char* pointer) {
  const json::json_pointer ptr(pointer);
  return cfg.contains(ptr) && !cfg.at(ptr).is_null();
}

std::string required_string(const json& cfg, const char* pointer, const char* flag) {
  if (!has(cfg, pointer)) throw InvalidArgument(std::string(flag) + " is required");
  return value<std::string>(cfg, pointer);
}

ExplainConfig explain_config(const json& cfg) {
  ExplainConfig ec;
  ec.k_target = value<int>(cfg, "/explain/k_target");
  ec.n_samples = value<int>(cfg, "/explain/n_samples");
  ec.p_blackout = value<double>(cfg, "/explain/p_blackout");
  ec.sigma = value<double>(cfg, "/explain/sigma");
  ec.kernel_width = value<double>(cfg, "/explain/kernel_width");
  ec.ridge_lambda = value<double>(cfg, "/explain/ridge_lambda");
  ec.compactness = value<double>(cfg, "/explain/compactness");
  ec.slic_iterations = value<int>(cfg, "/explain/slic_iterations");
  ec.flip_average = value<bool>(cfg, "/explain/flip_average");
  ec.seed = value<std::uint64_t>(cfg, "/seed");
  ec.workers = value<int>(cfg, "/workers");
  return ec;
}

int workers_of(const json& cfg) {
  const int w = value<int>(cfg, "/workers");
  if (w < 1) throw InvalidArgument("--workers must be >= 1");
  return w;
}

Fill resolve_fill(const json& cfg, const Embedder* embedder) {
  if (has(cfg, "/fill")) return fill_from_json(cfg.at(json::json_pointer("/fill")));
  return embedder ? embedder->descriptor().preferred_fill : Fill{};
}

json descriptor_json(const EmbedderDescriptor& d) {
  return json{{"name", d.name},
              {"dim", d.dim},
              {"kind", to_string(d.kind)},
              {"preferred_fill", fill_to_json(d.preferred_fill)}};
}

// Output directory plus a record of everything written, for the run manifest.
class Output {
 public:
  explicit Output(const fs::path& dir) : dir_(dir) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec || !fs::is_directory(dir_)) {
      throw InvalidArgument("output directory is not writable: " + dir_.string());
    }
  }

  fs::path path(const std::string& name) const { return dir_ / name; }

  void text(const std::string& name, const std::string& content) {
    io::write_file_atomic(path(name), content);
    written_.push_back(name);
  }
  void heatmap(const std::string& name, const Heatmap& map) {
    io::write_heatmap(path(name), map);
    written_.push_back(name);
  }
  void png(const std::string& name, const Heatmap& map) {
    io::write_heatmap_png(path(name), map);
    written_.push_back(name);
  }
  void image(const std::string& name, const Image& img) {
    io::write_image(path(name), img);
    written_.push_back(name);
  }
  void note(const std::string& name) { written_.push_back(name); }

  const std::vector<std::string>& written() const { return written_; }

 private:
  fs::path dir_;
  std::vector<std::string> written_;
};

void write_run_manifest(Output& out, const std::string& command, const json& cfg,
                        const json& timings) {
  json run{{"tool", "vlime"},
           {"version", kVersion},
           {"command", command},
           {"seed", cfg.value("seed", std::uint64_t{0})},
           {"prng", Xoshiro256::kName},
           {"config", cfg},
           {"timings_s", timings},
           {"outputs", out.written()}};
  io::write_file_atomic(out.path("run.json"), run.dump(2) + "\n");
}

// One image to process: an artifact name, a file and its seed index.
struct Job {
  std::string name;
  fs::path file;
  std::size_t index = 0;
};

std::string manifest_artifact_name(const Subject& s, const ImageRef& ref) {
  return sanitize(s.id) + "__" + sanitize(fs::path(ref.path).stem().string());
}

std::vector<Job> collect_jobs(const json& cfg) {
  std::vector<Job> jobs;
  if (has(cfg, "/manifest")) {
    const auto manifest = DatasetManifest::load(value<std::string>(cfg, "/manifest"));
    manifest.check_files();
    for (std::size_t s = 0; s < manifest.subjects().size(); ++s) {
      const Subject& subj = manifest.subjects()[s];
      for (std::size_t i = 0; i < subj.images.size(); ++i) {
        jobs.push_back({manifest_artifact_name(subj, subj.images[i]), subj.images[i].resolved,
                        manifest.flat_index(s, i)});
      }
    }
  }
  if (has(cfg, "/images")) {
    for (const auto& p : value<std::vector<std::string>>(cfg, "/images")) {
      if (!fs::exists(p)) throw DataError("image not found: " + p);
      jobs.push_back({sanitize(fs::path(p).stem().string()), p, jobs.size()});
    }
  }
  if (jobs.empty()) throw InvalidArgument("no input: give --image or --manifest");
  std::set<std::string> names;
  for (const auto& j : jobs) {
    if (!names.insert(j.name).second) {
      throw DataError("two inputs map to the same artifact name '" + j.name + "'");
    }
  }
  return jobs;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_segment(const json& cfg, std::ostream& log) {
  json timings = json::object();
  Output out(value<std::string>(cfg, "/out"));
  const ExplainConfig ec = explain_config(cfg);
  const auto jobs = collect_jobs(cfg);
  std::string csv = "name,width,height,k_target,k_actual\n";
  for (const auto& job : jobs) {
    Image img;
    {
      Stopwatch sw{timings, "read"};
      img = io::read_image(job.file);
    }
    SuperpixelMap sp;
    {
      Stopwatch sw{timings, "segment"};
      sp = slic_segment(img, ec.slic());
    }
    Stopwatch sw{timings, "write"};
    io::write_label_pgm16(out.path(job.name + ".labels.pgm"), sp.width(), sp.height(),
                          sp.labels());
    out.note(job.name + ".labels.pgm");
    out.image(job.name + ".overlay.png", boundary_overlay(img, sp, Fill{255, 0, 0}));
    csv += job.name + "," + std::to_string(sp.width()) + "," + std::to_string(sp.height()) + "," +
           std::to_string(ec.k_target) + "," + std::to_string(sp.count()) + "\n";
  }
  out.text("segments.csv", csv);
  write_run_manifest(out, "segment", cfg, timings);
  log << "segmented " << jobs.size() << " image(s) into " << out.path("").string() << "\n";
  return kOk;
}

int cmd_explain(const json& cfg, std::ostream& log) {
  json timings = json::object();
  Output out(value<std::string>(cfg, "/out"));
  ExplainConfig base = explain_config(cfg);
  workers_of(cfg);
  const auto embedder = make_embedder(required_string(cfg, "/embedder", "--embedder"));
  base.fill = resolve_fill(cfg, embedder.get());
  base.validate();
  const bool write_masks = has(cfg, "/masks") && value<bool>(cfg, "/masks");
  std::optional<Embedding> reference;
  if (has(cfg, "/reference")) {
    const Image ref_img = io::read_image(value<std::string>(cfg, "/reference"));
    reference = base.flip_average ? flip_averaged_descriptor(*embedder, ref_img)
                                  : embed(*embedder, ref_img);
  }
  const auto jobs = collect_jobs(cfg);
  for (const auto& job : jobs) {
    Image img;
    {
      Stopwatch sw{timings, "read"};
      img = io::read_image(job.file);
    }
    ExplainConfig ec = base;
    ec.seed = derive_seed(base.seed, job.index);
    const auto t0 = std::chrono::steady_clock::now();
    Explanation ex = [&] {
      Stopwatch sw{timings, "explain"};
      return reference ? explain_pair(img, *reference, *embedder, ec)
                       : explain(img, *embedder, ec);
    }();
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    Stopwatch sw{timings, "write"};
    out.heatmap(job.name + ".hm", ex.heatmap);
    out.png(job.name + ".png", ex.heatmap);
    json fit{{"image", job.file.string()},
             {"seed", ec.seed},
             {"k_actual", ex.segmentation.count()},
             {"queries", ex.queries},
             {"coefficients", ex.fit.coefficients},
             {"intercept", ex.fit.intercept},
             {"r_squared", ex.fit.r_squared},
             {"warnings", ex.fit.warnings},
             {"embedder", descriptor_json(embedder->descriptor())},
             {"fill", fill_to_json(ec.fill)},
             {"config", cfg.at("explain")},
             {"wall_time_s", wall}};
    out.text(job.name + ".fit.json", fit.dump(2) + "\n");
    if (write_masks) out.text(job.name + ".masks.csv", ex.masks.to_csv());
    for (const auto& w : ex.fit.warnings) log << job.name << ": warning: " << w << "\n";
  }
  write_run_manifest(out, "explain", cfg, timings);
  log << "explained " << jobs.size() << " image(s) into " << out.path("").string() << "\n";
  return kOk;
}

std::vector<fs::path> heatmap_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".hm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

int cmd_avgmap(const json& cfg, std::ostream& log) {
  json timings = json::object();
  Output out(value<std::string>(cfg, "/out"));
  if (!has(cfg, "/inputs")) throw InvalidArgument("--input is required");
  std::vector<fs::path> files;
  for (const auto& p : value<std::vector<std::string>>(cfg, "/inputs")) {
    if (fs::is_directory(p)) {
      const auto more = heatmap_files(p);
      files.insert(files.end(), more.begin(), more.end());
    } else if (fs::exists(p)) {
      files.emplace_back(p);
    } else {
      throw DataError("heatmap not found: " + p);
    }
  }
  if (files.empty()) throw DataError("avgmap: no .hm inputs found");
  std::vector<Heatmap> maps;
  {
    Stopwatch sw{timings, "read"};
    for (const auto& f : files) maps.push_back(io::read_heatmap(f));
  }
  Heatmap avg;
  {
    Stopwatch sw{timings, "average"};
    avg = average_heatmaps(maps);
  }
  const std::string name = has(cfg, "/output") ? value<std::string>(cfg, "/output") : "average.hm";
  out.heatmap(name, avg);
  out.png(fs::path(name).replace_extension(".png").string(), avg);
  write_run_manifest(out, "avgmap", cfg, timings);
  log << "averaged " << maps.size() << " heatmap(s)\n";
  return kOk;
}

int cmd_psnr_hist(const json& cfg, std::ostream& log) {
  json timings = json::object();
  Output out(value<std::string>(cfg, "/out"));
  const fs::path dir_a = required_string(cfg, "/dir_a", "--dir-a");
  const fs::path dir_b = required_string(cfg, "/dir_b", "--dir-b");
  json range = has(cfg, "/range") ? cfg.at("range") : json::array({14.0, 33.0});
  const double lo = range.at(0).get<double>();
  const double hi = range.at(1).get<double>();
  const int bins = has(cfg, "/bins") ? value<int>(cfg, "/bins") : 19;
  if (!(hi > lo) || bins < 1) throw InvalidArgument("psnr-hist: need LO < HI and bins >= 1");

  const auto files_a = heatmap_files(dir_a);
  const auto files_b = heatmap_files(dir_b);
  std::vector<std::string> names_a;
  std::vector<std::string> names_b;
  for (const auto& f : files_a) names_a.push_back(f.filename().string());
  for (const auto& f : files_b) names_b.push_back(f.filename().string());
  if (names_a != names_b) {
    std::vector<std::string> diff;
    std::set_symmetric_difference(names_a.begin(), names_a.end(), names_b.begin(), names_b.end(),
                                  std::back_inserter(diff));
    throw DataError("psnr-hist: heatmap file sets differ (first mismatch: " +
                    (diff.empty() ? std::string("?") : diff.front()) + ")");
  }

  std::string finite_csv = "file,psnr_db\n";
  std::string infinite_csv = "file\n";
  std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
  std::size_t below = 0;
  std::size_t above = 0;
  std::size_t n_finite = 0;
  std::size_t n_infinite = 0;
  const double width = (hi - lo) / bins;
  {
    Stopwatch sw{timings, "psnr"};
    for (std::size_t i = 0; i < files_a.size(); ++i) {
      const double v = psnr(io::read_heatmap(files_a[i]), io::read_heatmap(files_b[i]));
      if (std::isinf(v)) {
        infinite_csv += names_a[i] + "\n";
        ++n_infinite;
        continue;
      }
      finite_csv += names_a[i] + "," + fmt(v) + "\n";
      ++n_finite;
      if (v < lo) {
        ++below;
      } else if (v > hi) {
        ++above;
      } else {
        auto b = static_cast<std::size_t>(std::floor((v - lo) / width));
        counts[std::min(b, counts.size() - 1)]++;
      }
    }
  }
  std::string hist = "bin_lo,bin_hi,count\n";
  for (int b = 0; b < bins; ++b) {
    hist += fmt(lo + b * width) + "," + fmt(b + 1 == bins ? hi : lo + (b + 1) * width) + "," +
            std::to_string(counts[b]) + "\n";
  }
  out.text("psnr.csv", finite_csv);
  out.text("psnr_infinite.csv", infinite_csv);
  out.text("psnr_histogram.csv", hist);
  json report{{"files", files_a.size()},
              {"finite", n_finite},
              {"infinite", n_infinite},
              {"below_range", below},
              {"above_range", above},
              {"range", json::array({lo, hi})},
              {"bins", bins}};
  out.text("psnr_report.json", report.dump(2) + "\n");
  write_run_manifest(out, "psnr-hist", cfg, timings);
  log << n_finite << " finite, " << n_infinite << " infinite PSNR value(s)\n";
  return kOk;
}

// Descriptor source for an embedder spec: a live embedder or an .emb batch.
struct ScoringSource {
  std::shared_ptr<const Embedder> embedder;
  std::unique_ptr<DescriptorSource> source;
  json descriptor;
};

ScoringSource scoring_source(const std::string& spec_text, const DatasetManifest& manifest,
                             EmbeddingCache* cache) {
  const EmbedderSpec spec = parse_embedder_spec(spec_text);
  ScoringSource s;
  if (spec.kind == "emb") {
    auto batch = EmbeddingBatch::read(spec.argument);
    s.descriptor = json{{"name", "emb:" + spec.argument}, {"dim", batch.dim}, {"kind", "precomputed"}};
    s.source = std::make_unique<PrecomputedDescriptors>(std::move(batch));
  } else {
    manifest.check_files();
    s.embedder = make_embedder(spec);
    s.descriptor = descriptor_json(s.embedder->descriptor());
    s.source = std::make_unique<LiveDescriptors>(*s.embedder, disk_images(), cache);
  }
  return s;
}

json eer_json(const ScoreSet& scores, const json& cfg) {
  const EerResult r = eer(scores);
  return json{{"eer_percent", r.eer_percent},
              {"threshold", r.threshold},
              {"far", r.far},
              {"frr", r.frr},
              {"n_genuine", scores.genuine.size()},
              {"n_impostor", scores.impostor.size()},
              {"failed_pairs", scores.failed_pairs},
              {"config", cfg}};
}

void report_failures(const ScoreSet& scores, std::ostream& log) {
  for (const auto& f : scores.failures) log << "warning: " << f << "\n";
  if (scores.failed_pairs > 0) log << "warning: " << scores.failed_pairs << " pair(s) dropped\n";
}

int cmd_verify(const json& cfg, std::ostream& log) {
  json timings = json::object();
  Output out(value<std::string>(cfg, "/out"));
  const int workers = workers_of(cfg);
  const auto manifest = DatasetManifest::load(required_string(cfg, "/manifest", "--manifest"));
  const auto filter = parse_pose_filter(has(cfg, "/pose") ? value<std::string>(cfg, "/pose") : "overall");
  EmbeddingCache cache;
  const auto src = scoring_source(required_string(cfg, "/embedder", "--embedder"), manifest, &cache);
  const PairList pairs = generate_pairs(manifest, filter);
  ScoreSet scores;
  {
    Stopwatch sw{timings, "score"};
    scores = score_pairs(manifest, pairs, *src.source, workers);
  }
  report_failures(scores, log);
  out.text("scores.csv", scores_to_csv(manifest, scores));
  json report = eer_json(scores, cfg);
  report["embedder"] = src.descriptor;
  out.text("eer.json", report.dump(2) + "\n");
  write_run_manifest(out, "verify", cfg, timings);
  log << "EER " << short_number(report["eer_percent"].get<double>()) << "% over "
      << scores.genuine.size() << " genuine / " << scores.impostor.size() << " impostor pairs\n";
  return kOk;
}

int cmd_fuse_sweep(const json& cfg, std::ostream& log) {
  json timings = json::object();
  Output out(value<std::string>(cfg, "/out"));
  const double step = has(cfg, "/step") ? value<double>(cfg, "/step") : 0.02;
  ScoreSet set1;
  ScoreSet set2;
  if (has(cfg, "/scores_a") || has(cfg, "/scores_b")) {
    const auto read_table = [](const std::string& p) {
      const auto bytes = io::read_file(p);
      return ScoreTable::parse(std::string(bytes.begin(), bytes.end()));
    };
    const ScoreTable t1 = read_table(required_string(cfg, "/scores_a", "--scores-a"));
    const ScoreTable t2 = read_table(required_string(cfg, "/scores_b", "--scores-b"));
    if (!t1.same_pairs(t2)) throw DataError("fuse-sweep: score files list different pairs");
    set1 = t1.to_score_set();
    set2 = t2.to_score_set();
  } else {
    const int workers = workers_of(cfg);
    const auto manifest = DatasetManifest::load(required_string(cfg, "/manifest", "--manifest"));
    const auto filter =
        parse_pose_filter(has(cfg, "/pose") ? value<std::string>(cfg, "/pose") : "overall");
    const PairList pairs = generate_pairs(manifest, filter);
    EmbeddingCache cache;
    const auto s1 = scoring_source(required_string(cfg, "/embedder", "--embedder"), manifest, &cache);
    const auto s2 =
        scoring_source(required_string(cfg, "/embedder2", "--embedder2"), manifest, &cache);
    Stopwatch sw{timings, "score"};
    set1 = score_pairs(manifest, pairs, *s1.source, workers);
    set2 = score_pairs(manifest, pairs, *s2.source, workers);
    if (set1.failed_pairs > 0 || set2.failed_pairs > 0) {
      report_failures(set1, log);
      report_failures(set2, log);
      throw EmbedderError("fuse-sweep: descriptors failed; fusion needs complete score sets");
    }
    out.text("scores_a.csv", scores_to_csv(manifest, set1));
    out.text("scores_b.csv", scores_to_csv(manifest, set2));
  }
  FusionSweep sweep;
  {
    Stopwatch sw{timings, "sweep"};
    sweep = fusion_sweep(set1, set2, step);
  }
  std::string csv = "a,eer_percent\n";
  for (const auto& p : sweep.points) csv += fmt(p.a) + "," + fmt(p.eer_percent) + "\n";
  out.text("fusion.csv", csv);
  const auto& best = sweep.points[sweep.best];
  json report{{"best_a", best.a},
              {"best_eer_percent", best.eer_percent},
              {"eer_a0", sweep.points.front().eer_percent},
              {"eer_a1", sweep.points.back().eer_percent},
              {"step", step},
              {"config", cfg}};
  out.text("fusion.json", report.dump(2) + "\n");
  write_run_manifest(out, "fuse-sweep", cfg, timings);
  log << "best a = " << short_number(best.a) << ", EER " << short_number(best.eer_percent) << "%\n";
  return kOk;
}

int cmd_ablate(const json& cfg, std::ostream& log) {
  json timings = json::object();
  Output out(value<std::string>(cfg, "/out"));
  const int workers = workers_of(cfg);
  const auto manifest = DatasetManifest::load(required_string(cfg, "/manifest", "--manifest"));
  manifest.check_files();
  const fs::path heat_dir = required_string(cfg, "/heatmaps", "--heatmaps");
  if (!has(cfg, "/thresholds")) throw InvalidArgument("--thresholds is required");
  const auto thresholds = value<std::vector<double>>(cfg, "/thresholds");
  if (thresholds.empty()) throw InvalidArgument("--thresholds needs at least one value");
  const auto embedder = make_embedder(required_string(cfg, "/embedder", "--embedder"));
  const Fill fill = resolve_fill(cfg, embedder.get());
  const std::uint64_t seed = value<std::uint64_t>(cfg, "/seed");
  AblationOptions options;
  options.workers = workers;
  options.pose_filter =
      parse_pose_filter(has(cfg, "/pose") ? value<std::string>(cfg, "/pose") : "overall");

  std::vector<Image> images;
  std::vector<Heatmap> heatmaps;
  {
    Stopwatch sw{timings, "read"};
    for (std::size_t s = 0; s < manifest.subjects().size(); ++s) {
      const Subject& subj = manifest.subjects()[s];
      for (const auto& ref : subj.images) {
        images.push_back(io::read_image(ref.resolved));
        const fs::path hm = heat_dir / (manifest_artifact_name(subj, ref) + ".hm");
        if (!fs::exists(hm)) throw DataError("missing heatmap " + hm.string() + " for " + ref.path);
        heatmaps.push_back(io::read_heatmap(hm));
      }
    }
  }
  std::vector<AblationReport> reports;
  {
    Stopwatch sw{timings, "ablate"};
    reports = ablation_sweep(manifest, images, *embedder, heatmaps, thresholds, fill, seed, options);
  }
  std::string summary =
      "threshold,eer_targeted,eer_random,removal_min,removal_q1,removal_median,removal_q3,"
      "removal_max,removal_mean,similarity_drop_targeted,similarity_drop_random,"
      "failed_pairs_targeted,failed_pairs_random\n";
  for (const auto& r : reports) {
    summary += fmt(r.threshold) + "," + fmt(r.eer_targeted) + "," + fmt(r.eer_random) + "," +
               fmt(r.removal.min) + "," + fmt(r.removal.q1) + "," + fmt(r.removal.median) + "," +
               fmt(r.removal.q3) + "," + fmt(r.removal.max) + "," + fmt(r.removal.mean) + "," +
               fmt(r.similarity_drop_targeted) + "," + fmt(r.similarity_drop_random) + "," +
               std::to_string(r.failed_pairs_targeted) + "," +
               std::to_string(r.failed_pairs_random) + "\n";
    std::string per_image = "subject,image,fraction_removed\n";
    std::size_t flat = 0;
    for (const auto& subj : manifest.subjects()) {
      for (const auto& ref : subj.images) {
        per_image += subj.id + "," + ref.path + "," + fmt(r.fraction_removed[flat++]) + "\n";
      }
    }
    out.text("ablation_t" + short_number(r.threshold) + ".csv", per_image);
  }
  out.text("ablation.csv", summary);
  write_run_manifest(out, "ablate", cfg, timings);
  log << "ablated " << images.size() << " image(s) at " << reports.size() << " threshold(s)\n";
  return kOk;
}

int cmd_embed_batch(const json& cfg, std::ostream& log) {
  json timings = json::object();
  Output out(value<std::string>(cfg, "/out"));
  const int workers = workers_of(cfg);
  const auto manifest = DatasetManifest::load(required_string(cfg, "/manifest", "--manifest"));
  manifest.check_files();
  const auto embedder = make_embedder(required_string(cfg, "/embedder", "--embedder"));
  const std::string name = has(cfg, "/output") ? value<std::string>(cfg, "/output") : "embeddings.emb";
  const fs::path target = out.path(name);

  LiveDescriptors source(*embedder, disk_images());
  std::vector<std::size_t> all(manifest.image_count());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  DescriptorTable table;
  {
    Stopwatch sw{timings, "embed"};
    table = compute_descriptors(manifest, source, all, workers);
  }
  EmbeddingBatch batch;
  batch.dim = embedder->descriptor().dim;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (!table.rows[i]) continue;
    batch.paths.push_back(manifest.image(i).path);
    batch.rows.push_back(*table.rows[i]);
  }
  batch.write(target);
  out.note(name);
  out.note(EmbeddingBatch::manifest_path_for(name).string());
  if (!table.failures.empty()) {
    std::string errors = "error\n";
    for (const auto& f : table.failures) {
      log << "warning: " << f << "\n";
      std::string quoted = f;
      std::replace(quoted.begin(), quoted.end(), '"', '\'');
      errors += "\"" + quoted + "\"\n";
    }
    out.text(fs::path(name).replace_extension(".errors.csv").string(), errors);
  }
  write_run_manifest(out, "embed-batch", cfg, timings);
  log << "embedded " << batch.rows.size() << " of " << all.size() << " image(s)\n";
  return table.failures.empty() ? kOk : kEmbedder;
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument:
      return kUsage;
    case ErrorKind::kData:
      return kData;
    case ErrorKind::kEmbedder:
      return kEmbedder;
    case ErrorKind::kNumerical:
      return kNumerical;
  }
  return kNumerical;
}

}  // namespace

// ---------------------------------------------------------------------------
// Embedder specs

EmbedderSpec parse_embedder_spec(const std::string& text) {
  EmbedderSpec spec;
  const auto colon = text.find(':');
  spec.kind = text.substr(0, colon);
  const std::string rest = colon == std::string::npos ? "" : text.substr(colon + 1);
  if (spec.kind.empty()) throw InvalidArgument("empty embedder spec");
  if (spec.kind == "emb" || spec.kind == "bridge") {
    if (rest.empty()) throw InvalidArgument("embedder spec '" + text + "' needs an argument");
    spec.argument = rest;
    return spec;
  }
  if (!rest.empty()) {
    for (const auto& item : split(rest, ',')) {
      const auto eq = item.find('=');
      if (eq == std::string::npos || eq == 0) {
        throw InvalidArgument("embedder parameter must be key=value, got '" + item + "'");
      }
      spec.params.emplace_back(item.substr(0, eq), item.substr(eq + 1));
    }
  }
  return spec;
}

std::shared_ptr<const Embedder> make_embedder(const EmbedderSpec& spec) {
  if (spec.kind == "emb") {
    throw InvalidArgument("precomputed .emb descriptors only serve verification scoring");
  }
  if (spec.kind == "bridge") {
    BridgeOptions options;
    options.argv = split_command_line(spec.argument);
    return std::make_shared<BridgeEmbedder>(std::move(options));
  }
  std::map<std::string, std::string> params(spec.params.begin(), spec.params.end());
  auto take = [&](const std::string& key, const std::string& fallback) {
    auto it = params.find(key);
    if (it == params.end()) return fallback;
    std::string v = it->second;
    params.erase(it);
    return v;
  };
  const std::string scale = take("scale", "");
  std::shared_ptr<const Embedder> e;
  if (spec.kind == "region") {
    const int zone = static_cast<int>(parse_int(take("zone", "1"), "region zone"));
    const double gain = parse_real(take("gain", "10"), "region gain");
    e = std::make_shared<RegionEmbedder>(zone, gain);
  } else if (spec.kind == "projection") {
    const auto seed = parse_u64(take("seed", "0"), "projection seed");
    const auto dim = parse_int(take("dim", "64"), "projection dim");
    if (dim < 1) throw InvalidArgument("projection dim must be >= 1");
    e = std::make_shared<ProjectionEmbedder>(seed, static_cast<std::size_t>(dim));
  } else if (spec.kind == "constant") {
    const auto dim = parse_int(take("dim", "8"), "constant dim");
    const double v = parse_real(take("value", "1"), "constant value");
    if (dim < 1) throw InvalidArgument("constant dim must be >= 1");
    e = std::make_shared<ConstantEmbedder>(std::vector<double>(static_cast<std::size_t>(dim), v));
  } else {
    throw InvalidArgument("unknown embedder '" + spec.kind +
                          "' (expected region, projection, constant, emb or bridge)");
  }
  if (!params.empty()) {
    throw InvalidArgument("unknown parameter '" + params.begin()->first + "' for embedder " +
                          spec.kind);
  }
  if (!scale.empty()) e = std::make_shared<ScaledEmbedder>(e, parse_real(scale, "scale"));
  return e;
}

std::shared_ptr<const Embedder> make_embedder(const std::string& text) {
  return make_embedder(parse_embedder_spec(text));
}

// ---------------------------------------------------------------------------
// Entry point

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Black-box saliency maps for embedding-based face verification", "vlime"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::vector<std::unique_ptr<Command>> commands;
  auto add_command = [&](const std::string& name, const std::string& help) -> Command& {
    commands.push_back(std::make_unique<Command>(app.add_subcommand(name, help), name));
    return *commands.back();
  };

  Command& segment = add_command("segment", "SLIC superpixels: label PGM and boundary overlay");
  segment.add({kImages, kManifest, kKTarget, kCompactness, kIterations});

  Command& explain_cmd = add_command("explain", "per-image saliency heatmaps");
  explain_cmd.add({kImages, kManifest, kEmbedderFlag, kFillFlag});
  explain_cmd.add(kExplainFlags);
  explain_cmd.add({"--masks", "/masks", FlagType::kBool, "also write the mask matrix CSV"});
  explain_cmd.add({"--reference", "/reference", FlagType::kStr,
                   "explain similarity to this image instead of to the input itself"});

  Command& avgmap = add_command("avgmap", "pixel-wise average of heatmaps");
  avgmap.add({"--input", "/inputs", FlagType::kStrList, ".hm files or directories"});
  avgmap.add({"--output", "/output", FlagType::kStr, "output name (default average.hm)"});

  Command& psnr_cmd = add_command("psnr-hist", "PSNR between two heatmap directories");
  psnr_cmd.add({"--dir-a", "/dir_a", FlagType::kStr, "first heatmap directory"});
  psnr_cmd.add({"--dir-b", "/dir_b", FlagType::kStr, "second heatmap directory"});
  psnr_cmd.add({"--range", "/range", FlagType::kRange, "histogram range LO:HI in dB (14:33)"});
  psnr_cmd.add({"--bins", "/bins", FlagType::kInt, "histogram bin count (19)"});

  Command& verify = add_command("verify", "genuine/impostor scoring and EER");
  verify.add({kManifest, kEmbedderFlag, kPose});

  Command& fuse = add_command("fuse-sweep", "EER of a*s1 + (1-a)*s2 over a");
  fuse.add({kManifest, kEmbedderFlag, kEmbedder2Flag, kPose});
  fuse.add({"--scores-a", "/scores_a", FlagType::kStr, "score CSV of the first system"});
  fuse.add({"--scores-b", "/scores_b", FlagType::kStr, "score CSV of the second system"});
  fuse.add({"--step", "/step", FlagType::kReal, "weight step (0.02)"});

  Command& ablate = add_command("ablate", "targeted vs random pixel removal");
  ablate.add({kManifest, kEmbedderFlag, kFillFlag, kPose});
  ablate.add({"--heatmaps", "/heatmaps", FlagType::kStr, "directory of <subject>__<stem>.hm"});
  ablate.add({"--thresholds", "/thresholds", FlagType::kRealList, "e.g. 1.0,0.9,0.8"});

  Command& batch = add_command("embed-batch", "flip-averaged descriptors to an .emb file");
  batch.add({kManifest, kEmbedderFlag});
  batch.add({"--output", "/output", FlagType::kStr, "output name (default embeddings.emb)"});

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  const Command* chosen = nullptr;
  for (const auto& c : commands) {
    if (c->app()->parsed()) chosen = c.get();
  }
  try {
    const json cfg = chosen->resolve();
    const std::string& name = chosen->name();
    if (name == "segment") return cmd_segment(cfg, out);
    if (name == "explain") return cmd_explain(cfg, out);
    if (name == "avgmap") return cmd_avgmap(cfg, out);
    if (name == "psnr-hist") return cmd_psnr_hist(cfg, out);
    if (name == "verify") return cmd_verify(cfg, out);
    if (name == "fuse-sweep") return cmd_fuse_sweep(cfg, out);
    if (name == "ablate") return cmd_ablate(cfg, out);
    if (name == "embed-batch") return cmd_embed_batch(cfg, out);
    err << "error: unhandled command " << name << "\n";
    return kUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const json::exception& e) {
    err << "error: configuration: " << e.what() << "\n";
    return kUsage;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << "\n";
    return kNumerical;
  }
}

}  // namespace vlime::cli
