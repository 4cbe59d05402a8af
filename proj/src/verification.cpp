#include "vlime/verification.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <set>
#include <sstream>

#include "vlime/error.hpp"
#include "vlime/image_io.hpp"
#include "vlime/parallel.hpp"

namespace vlime {

namespace {

using json = nlohmann::json;

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

std::string format_score(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

Pose parse_pose(const std::string& text) {
  const std::string t = lower(text);
  if (t == "frontal" || t == "f") return Pose::kFrontal;
  if (t == "three-quarter" || t == "3/4" || t == "threequarter" || t == "three_quarter") {
    return Pose::kThreeQuarter;
  }
  if (t == "profile" || t == "p") return Pose::kProfile;
  if (t == "untagged" || t == "u" || t.empty()) return Pose::kUntagged;
  throw InvalidArgument("unknown pose '" + text + "'");
}

std::string to_string(Pose pose) {
  switch (pose) {
    case Pose::kFrontal:
      return "frontal";
    case Pose::kThreeQuarter:
      return "three-quarter";
    case Pose::kProfile:
      return "profile";
    case Pose::kUntagged:
      return "untagged";
  }
  return "untagged";
}

std::string short_name(Pose pose) {
  switch (pose) {
    case Pose::kFrontal:
      return "F";
    case Pose::kThreeQuarter:
      return "3/4";
    case Pose::kProfile:
      return "P";
    case Pose::kUntagged:
      return "U";
  }
  return "U";
}

DatasetManifest::DatasetManifest(std::vector<Subject> subjects)
    : subjects_(std::move(subjects)) {
  std::set<std::string> ids;
  offsets_.assign(1, 0);
  for (const auto& s : subjects_) {
    if (!ids.insert(s.id).second) throw DataError("manifest: duplicate subject id '" + s.id + "'");
    offsets_.push_back(offsets_.back() + s.images.size());
  }
}

DatasetManifest DatasetManifest::parse(const std::string& json_text,
                                       const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest: invalid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("subjects") || !doc["subjects"].is_array()) {
    throw DataError("manifest: expected an object with a 'subjects' array");
  }
  std::vector<Subject> subjects;
  for (const auto& s : doc["subjects"]) {
    if (!s.is_object() || !s.contains("id") || !s.contains("images") ||
        !s["images"].is_array()) {
      throw DataError("manifest: each subject needs 'id' and an 'images' array");
    }
    Subject subject;
    subject.id = s["id"].is_string() ? s["id"].get<std::string>() : s["id"].dump();
    for (const auto& im : s["images"]) {
      ImageRef ref;
      if (im.is_string()) {
        ref.path = im.get<std::string>();
      } else if (im.is_object() && im.contains("path") && im["path"].is_string()) {
        ref.path = im["path"].get<std::string>();
        if (im.contains("pose")) {
          try {
            ref.pose = parse_pose(im["pose"].get<std::string>());
          } catch (const std::exception& e) {
            throw DataError("manifest: " + std::string(e.what()));
          }
        }
      } else {
        throw DataError("manifest: image entries need a string 'path'");
      }
      const std::filesystem::path p(ref.path);
      ref.resolved = p.is_absolute() ? p : base_dir / p;
      subject.images.push_back(std::move(ref));
    }
    subjects.push_back(std::move(subject));
  }
  return DatasetManifest(std::move(subjects));
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("manifest not found: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.parent_path());
}

const ImageRef& DatasetManifest::image(std::size_t flat) const {
  const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), flat);
  const std::size_t subject = static_cast<std::size_t>(it - offsets_.begin()) - 1;
  return subjects_.at(subject).images.at(flat - offsets_[subject]);
}

void DatasetManifest::check_files() const {
  for (const auto& s : subjects_) {
    for (const auto& im : s.images) {
      if (!std::filesystem::exists(im.resolved)) {
        throw DataError("image not found: " + im.resolved.string() + " (subject " + s.id + ")");
      }
    }
  }
}

std::optional<PoseFilter> parse_pose_filter(const std::string& text) {
  const std::string t = lower(text);
  if (t.empty() || t == "overall" || t == "all") return std::nullopt;
  const auto colon = t.find(':');
  if (colon == std::string::npos) {
    throw InvalidArgument("pose filter must look like A:B, got '" + text + "'");
  }
  return PoseFilter{parse_pose(t.substr(0, colon)), parse_pose(t.substr(colon + 1))};
}

PairList generate_pairs(const DatasetManifest& manifest,
                        const std::optional<PoseFilter>& filter,
                        std::size_t impostor_span) {
  const auto& subjects = manifest.subjects();
  const std::size_t s_count = subjects.size();
  if (s_count < 2) throw DataError("generate_pairs: at least two subjects are required");

  auto matches = [&](Pose p, Pose q) {
    if (!filter) return true;
    return (p == filter->a && q == filter->b) || (p == filter->b && q == filter->a);
  };

  PairList out;
  for (std::size_t s = 0; s < s_count; ++s) {
    const auto& images = subjects[s].images;
    for (std::size_t i = 0; i < images.size(); ++i) {
      for (std::size_t j = i + 1; j < images.size(); ++j) {
        if (matches(images[i].pose, images[j].pose)) out.genuine.push_back({s, i, s, j});
      }
    }
  }

  // Position of the n-th image (0-based) with the given pose, or of the n-th
  // image overall when no filter is active.
  auto nth_image = [&](std::size_t s, const Pose* pose,
                       std::size_t n) -> std::optional<std::size_t> {
    const auto& images = subjects[s].images;
    std::size_t seen = 0;
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (pose && images[i].pose != *pose) continue;
      if (seen++ == n) return i;
    }
    return std::nullopt;
  };
  const Pose* pose_first = filter ? &filter->a : nullptr;
  const Pose* pose_second = filter ? &filter->b : nullptr;

  const std::size_t span = std::min(impostor_span, s_count - 1);
  for (std::size_t s = 0; s < s_count; ++s) {
    const auto first = nth_image(s, pose_first, 0);
    if (!first) {
      throw DataError("generate_pairs: subject '" + subjects[s].id +
                      "' has no image for the impostor probe role");
    }
    for (std::size_t j = 1; j <= span; ++j) {
      const std::size_t other = (s + j) % s_count;
      const auto second = nth_image(other, pose_second, 1);
      if (!second) {
        throw DataError("generate_pairs: subject '" + subjects[other].id +
                        "' has fewer than 2 images for the impostor role");
      }
      out.impostor.push_back({s, *first, other, *second});
    }
  }
  if (out.genuine.empty()) throw DataError("generate_pairs: no genuine pairs match the filter");
  return out;
}

std::vector<double> ScoreSet::genuine_scores() const {
  std::vector<double> out;
  out.reserve(genuine.size());
  for (const auto& p : genuine) out.push_back(p.score);
  return out;
}

std::vector<double> ScoreSet::impostor_scores() const {
  std::vector<double> out;
  out.reserve(impostor.size());
  for (const auto& p : impostor) out.push_back(p.score);
  return out;
}

ImageProvider disk_images() {
  return [](std::size_t, const ImageRef& ref) { return io::read_image(ref.resolved); };
}

ImageProvider memory_images(const std::vector<Image>& images) {
  return [&images](std::size_t flat, const ImageRef&) -> Image { return images.at(flat); };
}

LiveDescriptors::LiveDescriptors(const Embedder& embedder, ImageProvider images,
                                 EmbeddingCache* cache)
    : embedder_(embedder), images_(std::move(images)), cache_(cache) {}

Embedding LiveDescriptors::descriptor(std::size_t flat_index, const ImageRef& ref) const {
  const Image img = images_(flat_index, ref);
  auto compute = [&] { return to_single_precision(flip_averaged_descriptor(embedder_, img)); };
  if (!cache_) return compute();
  return cache_->get_or_compute(embedder_.descriptor().name + "|flip-avg", img, compute);
}

PrecomputedDescriptors::PrecomputedDescriptors(EmbeddingBatch batch) : batch_(std::move(batch)) {
  for (std::size_t i = 0; i < batch_.paths.size(); ++i) {
    if (!index_.emplace(batch_.paths[i], i).second) {
      throw DataError("embedding batch lists '" + batch_.paths[i] + "' twice");
    }
  }
}

Embedding PrecomputedDescriptors::descriptor(std::size_t, const ImageRef& ref) const {
  const auto it = index_.find(ref.path);
  if (it == index_.end()) {
    throw EmbedderError("no precomputed embedding for '" + ref.path + "'");
  }
  return batch_.rows[it->second];
}

DescriptorTable compute_descriptors(const DatasetManifest& manifest,
                                    const DescriptorSource& source,
                                    std::span<const std::size_t> flat_indices, int workers) {
  DescriptorTable table;
  table.rows.resize(manifest.image_count());
  std::vector<std::string> errors(flat_indices.size());
  const std::size_t threads = source.concurrent() ? static_cast<std::size_t>(workers) : 1;
  parallel_for(flat_indices.size(), threads, [&](std::size_t i) {
    const std::size_t flat = flat_indices[i];
    const ImageRef& ref = manifest.image(flat);
    try {
      table.rows[flat] = source.descriptor(flat, ref);
    } catch (const EmbedderError& e) {
      errors[i] = ref.path + ": " + e.what();
    } catch (const DataError& e) {
      errors[i] = ref.path + ": " + e.what();
    }
  });
  for (auto& e : errors) {
    if (!e.empty()) table.failures.push_back(std::move(e));
  }
  return table;
}

ScoreSet score_pairs(const DatasetManifest& manifest, const PairList& pairs,
                     const DescriptorSource& source, int workers) {
  std::vector<char> needed(manifest.image_count(), 0);
  for (const auto* list : {&pairs.genuine, &pairs.impostor}) {
    for (const auto& p : *list) {
      needed[manifest.flat_index(p.subject_a, p.image_a)] = 1;
      needed[manifest.flat_index(p.subject_b, p.image_b)] = 1;
    }
  }
  std::vector<std::size_t> flat;
  for (std::size_t i = 0; i < needed.size(); ++i) {
    if (needed[i]) flat.push_back(i);
  }
  const DescriptorTable table = compute_descriptors(manifest, source, flat, workers);

  ScoreSet out;
  out.failures = table.failures;
  auto score_list = [&](const std::vector<Pair>& in, std::vector<ScoredPair>& dst) {
    for (const auto& p : in) {
      const auto& a = table.rows[manifest.flat_index(p.subject_a, p.image_a)];
      const auto& b = table.rows[manifest.flat_index(p.subject_b, p.image_b)];
      if (!a || !b) {
        ++out.failed_pairs;
        continue;
      }
      dst.push_back({p, cosine_similarity(*a, *b)});
    }
  };
  score_list(pairs.genuine, out.genuine);
  score_list(pairs.impostor, out.impostor);
  return out;
}

EerResult eer(std::span<const double> genuine, std::span<const double> impostor) {
  if (genuine.empty() || impostor.empty()) {
    throw InvalidArgument("eer: genuine and impostor score lists must be non-empty");
  }
  std::vector<double> g(genuine.begin(), genuine.end());
  std::vector<double> im(impostor.begin(), impostor.end());
  for (double v : g) {
    if (!std::isfinite(v)) throw NumericalError("eer: non-finite genuine score");
  }
  for (double v : im) {
    if (!std::isfinite(v)) throw NumericalError("eer: non-finite impostor score");
  }
  std::sort(g.begin(), g.end());
  std::sort(im.begin(), im.end());
  std::vector<double> pooled;
  pooled.reserve(g.size() + im.size());
  std::merge(g.begin(), g.end(), im.begin(), im.end(), std::back_inserter(pooled));
  pooled.erase(std::unique(pooled.begin(), pooled.end()), pooled.end());

  const auto n_g = static_cast<long long>(g.size());
  const auto n_i = static_cast<long long>(im.size());
  // Errors as integer counts; |FAR - FRR| is compared as |fa*G - fr*I| to
  // keep tie-breaking exact.
  long long best_gap = std::numeric_limits<long long>::max();
  long long best_fr = 0;
  long long best_fa = 0;
  double best_t = 0.0;
  auto consider = [&](double t, long long fr, long long fa) {
    const long long gap = std::llabs(fa * n_g - fr * n_i);
    if (gap < best_gap) {
      best_gap = gap;
      best_fr = fr;
      best_fa = fa;
      best_t = t;
    }
  };

  consider(-std::numeric_limits<double>::infinity(), 0, n_i);
  std::size_t gi = 0;
  std::size_t ii = 0;
  for (std::size_t k = 0; k + 1 < pooled.size(); ++k) {
    const double t = pooled[k] + (pooled[k + 1] - pooled[k]) / 2.0;
    // Scores <= pooled[k] fall below t; those >= pooled[k+1] do not.
    while (gi < g.size() && g[gi] <= pooled[k]) ++gi;
    while (ii < im.size() && im[ii] <= pooled[k]) ++ii;
    consider(t, static_cast<long long>(gi), n_i - static_cast<long long>(ii));
  }
  consider(std::numeric_limits<double>::infinity(), n_g, 0);

  EerResult r;
  r.frr = static_cast<double>(best_fr) / static_cast<double>(n_g);
  r.far = static_cast<double>(best_fa) / static_cast<double>(n_i);
  r.eer_percent = 100.0 * (r.far + r.frr) / 2.0;
  r.threshold = best_t;
  return r;
}

EerResult eer(const ScoreSet& scores) {
  return eer(scores.genuine_scores(), scores.impostor_scores());
}

double fuse_scores(double s1, double s2, double a) {
  if (!(a >= 0.0 && a <= 1.0)) throw InvalidArgument("fuse_scores: weight must lie in [0, 1]");
  return a * s1 + (1.0 - a) * s2;
}

FusionSweep fusion_sweep(const ScoreSet& set1, const ScoreSet& set2, double step) {
  if (!(step > 0.0 && step <= 1.0)) throw InvalidArgument("fusion_sweep: step must lie in (0, 1]");
  auto same = [](const std::vector<ScoredPair>& x, const std::vector<ScoredPair>& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!(x[i].pair == y[i].pair)) return false;
    }
    return true;
  };
  if (!same(set1.genuine, set2.genuine) || !same(set1.impostor, set2.impostor)) {
    throw InvalidArgument("fusion_sweep: score sets cover different pair lists");
  }
  const auto steps = static_cast<std::size_t>(std::ceil(1.0 / step - 1e-9));
  FusionSweep out;
  std::vector<double> g(set1.genuine.size());
  std::vector<double> im(set1.impostor.size());
  for (std::size_t i = 0; i <= steps; ++i) {
    const double a = i == steps ? 1.0 : std::min(1.0, static_cast<double>(i) * step);
    for (std::size_t p = 0; p < g.size(); ++p) {
      g[p] = fuse_scores(set1.genuine[p].score, set2.genuine[p].score, a);
    }
    for (std::size_t p = 0; p < im.size(); ++p) {
      im[p] = fuse_scores(set1.impostor[p].score, set2.impostor[p].score, a);
    }
    out.points.push_back({a, eer(g, im).eer_percent});
    if (out.points.back().eer_percent < out.points[out.best].eer_percent) {
      out.best = out.points.size() - 1;
    }
  }
  return out;
}

std::string scores_to_csv(const DatasetManifest& manifest, const ScoreSet& scores) {
  std::string out = "type,subject_a,image_a,subject_b,image_b,score\n";
  auto emit = [&](const char* type, const std::vector<ScoredPair>& list) {
    for (const auto& sp : list) {
      const auto& sa = manifest.subjects()[sp.pair.subject_a];
      const auto& sb = manifest.subjects()[sp.pair.subject_b];
      out += type;
      out += ',' + csv_field(sa.id) + ',' + csv_field(sa.images[sp.pair.image_a].path) + ',' +
             csv_field(sb.id) + ',' + csv_field(sb.images[sp.pair.image_b].path) + ',' +
             format_score(sp.score) + '\n';
    }
  };
  emit("genuine", scores.genuine);
  emit("impostor", scores.impostor);
  return out;
}

ScoreTable ScoreTable::parse(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != "type,subject_a,image_a,subject_b,image_b,score") {
    throw DataError("score CSV: unexpected header");
  }
  ScoreTable table;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 6 || (f[0] != "genuine" && f[0] != "impostor")) {
      throw DataError("score CSV: malformed row " + std::to_string(line_no));
    }
    Row row{f[0], f[1], f[2], f[3], f[4], 0.0};
    char* end = nullptr;
    row.score = std::strtod(f[5].c_str(), &end);
    if (end == f[5].c_str() || *end != '\0' || !std::isfinite(row.score)) {
      throw DataError("score CSV: bad score on row " + std::to_string(line_no));
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

ScoreSet ScoreTable::to_score_set() const {
  ScoreSet out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const ScoredPair sp{Pair{i, 0, i, 0}, rows[i].score};
    (rows[i].type == "genuine" ? out.genuine : out.impostor).push_back(sp);
  }
  return out;
}

bool ScoreTable::same_pairs(const ScoreTable& other) const {
  if (rows.size() != other.rows.size()) return false;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Row& a = rows[i];
    const Row& b = other.rows[i];
    if (a.type != b.type || a.subject_a != b.subject_a || a.image_a != b.image_a ||
        a.subject_b != b.subject_b || a.image_b != b.image_b) {
      return false;
    }
  }
  return true;
}

}  // namespace vlime
