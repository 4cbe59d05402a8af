#include "vlime/embedding.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>

#include "vlime/error.hpp"
#include "vlime/image_io.hpp"
#include "vlime/rng.hpp"

namespace vlime {

std::string to_string(EmbedderKind kind) {
  switch (kind) {
    case EmbedderKind::kSyntheticRegion:
      return "synthetic-region";
    case EmbedderKind::kSyntheticConstant:
      return "synthetic-constant";
    case EmbedderKind::kSyntheticProjection:
      return "synthetic-projection";
    case EmbedderKind::kBridge:
      return "bridge";
  }
  return "unknown";
}

Embedding embed(const Embedder& embedder, const Image& img) {
  Embedding e = embedder.embed(img);
  const auto& desc = embedder.descriptor();
  if (e.dim() != desc.dim) {
    throw EmbedderError("embedder '" + desc.name + "' returned dim " +
                        std::to_string(e.dim()) + ", declared " +
                        std::to_string(desc.dim));
  }
  for (double v : e.values) {
    if (!std::isfinite(v)) {
      throw EmbedderError("embedder '" + desc.name + "' returned a non-finite value");
    }
  }
  return e;
}

ConstantEmbedder::ConstantEmbedder(std::vector<double> value, std::string name)
    : value_{std::move(value)} {
  if (value_.values.empty()) throw InvalidArgument("constant embedder needs dim >= 1");
  desc_ = {std::move(name), value_.dim(), EmbedderKind::kSyntheticConstant, Fill{}};
}

Embedding ConstantEmbedder::embed(const Image&) const { return value_; }

RegionEmbedder::RegionEmbedder(int zone, double gain, std::string name)
    : zone_(zone), gain_(gain) {
  if (zone < 0 || zone >= kZones) {
    throw InvalidArgument("region embedder zone must be in [0, 8)");
  }
  if (!(gain > 0.0) || !std::isfinite(gain)) {
    throw InvalidArgument("region embedder gain must be > 0");
  }
  desc_ = {std::move(name), kZones, EmbedderKind::kSyntheticRegion, Fill{}};
}

RegionEmbedder::Rect RegionEmbedder::zone_rect(int zone, int width, int height) {
  const int col = zone % kZoneCols;
  const int row = zone / kZoneCols;
  return {col * width / kZoneCols, row * height / kZoneRows,
          (col + 1) * width / kZoneCols, (row + 1) * height / kZoneRows};
}

Embedding RegionEmbedder::embed(const Image& img) const {
  if (img.width() < kZoneCols || img.height() < kZoneRows) {
    throw EmbedderError("region embedder needs at least a 4x2 image");
  }
  std::array<double, kZones> means{};
  for (int z = 0; z < kZones; ++z) {
    const Rect r = zone_rect(z, img.width(), img.height());
    std::uint64_t sum = 0;
    for (int y = r.y0; y < r.y1; ++y) {
      for (int x = r.x0; x < r.x1; ++x) {
        for (int c = 0; c < img.channels(); ++c) sum += img.at(x, y, c);
      }
    }
    const double count = static_cast<double>(r.x1 - r.x0) * (r.y1 - r.y0) * img.channels();
    means[z] = static_cast<double>(sum) / count / 255.0;
  }
  Embedding out;
  out.values.reserve(kZones);
  out.values.push_back(gain_ * means[zone_]);
  for (int z = 0; z < kZones; ++z) {
    if (z != zone_) out.values.push_back(means[z]);
  }
  return out;
}

ProjectionEmbedder::ProjectionEmbedder(std::uint64_t seed, std::size_t dim, std::string name)
    : seed_(seed) {
  if (dim < 1) throw InvalidArgument("projection embedder needs dim >= 1");
  desc_ = {std::move(name), dim, EmbedderKind::kSyntheticProjection, Fill{}};
}

const std::vector<float>& ProjectionEmbedder::weights_for(int w, int h, int c) const {
  const auto key = std::make_tuple(w, h, c);
  {
    std::shared_lock lock(mutex_);
    if (auto it = weights_.find(key); it != weights_.end()) return it->second;
  }
  std::unique_lock lock(mutex_);
  if (auto it = weights_.find(key); it != weights_.end()) return it->second;
  const std::uint64_t shape = mix64((static_cast<std::uint64_t>(w) << 32) ^
                                    (static_cast<std::uint64_t>(h) << 8) ^
                                    static_cast<std::uint64_t>(c));
  Xoshiro256 rng(seed_ ^ shape);
  std::vector<float> weights(desc_.dim * static_cast<std::size_t>(w) * h * c);
  for (auto& v : weights) v = static_cast<float>(2.0 * rng.uniform() - 1.0);
  return weights_.emplace(key, std::move(weights)).first->second;
}

Embedding ProjectionEmbedder::embed(const Image& img) const {
  const auto& weights = weights_for(img.width(), img.height(), img.channels());
  const auto data = img.data();
  Embedding out;
  out.values.assign(desc_.dim, 0.0);
  for (std::size_t d = 0; d < desc_.dim; ++d) {
    const float* row = weights.data() + d * data.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) acc += row[i] * (data[i] / 255.0);
    out.values[d] = acc;
  }
  return out;
}

ScaledEmbedder::ScaledEmbedder(std::shared_ptr<const Embedder> inner, double factor)
    : inner_(std::move(inner)), factor_(factor) {
  if (!inner_) throw InvalidArgument("scaled embedder needs an inner embedder");
  if (!std::isfinite(factor) || factor == 0.0) {
    throw InvalidArgument("scale factor must be finite and non-zero");
  }
  desc_ = inner_->descriptor();
  std::ostringstream name;
  name << desc_.name << "*" << factor;
  desc_.name = name.str();
}

Embedding ScaledEmbedder::embed(const Image& img) const {
  Embedding e = inner_->embed(img);
  for (auto& v : e.values) v *= factor_;
  return e;
}

double cosine_similarity(const Embedding& u, const Embedding& v) {
  if (u.dim() != v.dim()) {
    throw InvalidArgument("cosine_similarity: dimension mismatch (" +
                          std::to_string(u.dim()) + " vs " + std::to_string(v.dim()) + ")");
  }
  if (u.dim() == 0) throw InvalidArgument("cosine_similarity: empty embedding");
  auto unit = [](const Embedding& e) {
    double nn = 0.0;
    for (double x : e.values) nn += x * x;
    const double norm = std::sqrt(nn);
    if (!(norm >= 1e-12) || !std::isfinite(norm)) {
      throw NumericalError("cosine_similarity: zero-norm or non-finite embedding");
    }
    std::vector<double> out(e.dim());
    for (std::size_t i = 0; i < e.dim(); ++i) {
      out[i] = static_cast<double>(static_cast<float>(e.values[i] / norm));
    }
    return out;
  };
  const std::vector<double> a = unit(u);
  const std::vector<double> b = unit(v);
  double dot = 0.0;
  double aa = 0.0;
  double bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  // sqrt(x * x) == x in IEEE arithmetic, so identical inputs give exactly 1.
  return std::clamp(dot / std::sqrt(aa * bb), -1.0, 1.0);
}

double norm(const Embedding& e) {
  double nn = 0.0;
  for (double x : e.values) nn += x * x;
  return std::sqrt(nn);
}

Embedding flip_averaged_descriptor(const Embedder& embedder, const Image& img) {
  const Embedding a = embed(embedder, img);
  const Embedding b = embed(embedder, flip_horizontal(img));
  Embedding out;
  out.values.resize(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i) out.values[i] = (a.values[i] + b.values[i]) / 2.0;
  return out;
}

Embedding to_single_precision(const Embedding& e) {
  Embedding out = e;
  for (auto& v : out.values) v = static_cast<double>(static_cast<float>(v));
  return out;
}

double scalar_probe(const ScalarProbe& probe, const Image& img) {
  const double v = probe(img);
  if (!(v >= 0.0 && v <= 1.0)) {
    throw EmbedderError("scalar probe returned " + std::to_string(v) +
                        ", outside [0, 1]");
  }
  return v;
}

ScalarProbe constant_probe(double value) {
  return [value](const Image&) { return value; };
}

ScalarProbe cosine_probe(std::shared_ptr<const Embedder> embedder, const Image& reference) {
  if (!embedder) throw InvalidArgument("cosine_probe: null embedder");
  Embedding ref = embed(*embedder, reference);
  if (!(norm(ref) >= 1e-12)) throw NumericalError("cosine_probe: the reference embedding has zero norm");
  return [embedder = std::move(embedder), ref = std::move(ref)](const Image& img) {
    const Embedding e = embed(*embedder, img);
    return norm(e) >= 1e-12 ? cosine_similarity(ref, e) : 0.0;
  };
}

ScalarProbe area_fraction_probe(std::vector<std::uint8_t> region, Fill fill) {
  std::size_t area = 0;
  for (auto f : region) area += (f != 0);
  if (area == 0) throw InvalidArgument("area_fraction_probe: empty region");
  return [region = std::move(region), fill, area](const Image& img) {
    if (img.pixel_count() != region.size()) {
      throw EmbedderError("area_fraction_probe: image size does not match region");
    }
    std::size_t kept = 0;
    for (std::size_t p = 0; p < region.size(); ++p) {
      if (region[p] && !img.pixel_equals(p, fill)) ++kept;
    }
    return static_cast<double>(kept) / static_cast<double>(area);
  };
}

std::uint64_t content_hash(const Image& img) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto feed = [&h](std::uint8_t b) {
    h ^= b;
    h *= 0x100000001B3ULL;
  };
  for (int v : {img.width(), img.height(), img.channels()}) {
    for (int i = 0; i < 4; ++i) feed(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  for (auto b : img.data()) feed(b);
  return h;
}

std::optional<Embedding> EmbeddingCache::find(const std::string& tag,
                                              std::uint64_t hash) const {
  std::shared_lock lock(mutex_);
  if (auto it = entries_.find({tag, hash}); it != entries_.end()) return it->second;
  return std::nullopt;
}

void EmbeddingCache::insert(const std::string& tag, std::uint64_t hash, Embedding e) {
  std::unique_lock lock(mutex_);
  entries_.emplace(std::make_pair(tag, hash), std::move(e));
}

std::size_t EmbeddingCache::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

std::vector<std::uint8_t> EmbeddingBatch::encode() const {
  std::vector<std::uint8_t> out = {'E', 'M', 'B', '1'};
  io::put_u32le(out, static_cast<std::uint32_t>(rows.size()));
  io::put_u32le(out, static_cast<std::uint32_t>(dim));
  for (const auto& row : rows) {
    if (row.dim() != dim) throw InvalidArgument("embedding batch: ragged rows");
    for (double v : row.values) io::put_f32le(out, static_cast<float>(v));
  }
  return out;
}

EmbeddingBatch EmbeddingBatch::decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "EMB1", 4) != 0) {
    throw DataError("embedding batch: missing EMB1 header");
  }
  EmbeddingBatch batch;
  const std::size_t count = io::get_u32le(bytes, 4);
  batch.dim = io::get_u32le(bytes, 8);
  if (bytes.size() != 12 + count * batch.dim * 4) {
    throw DataError("embedding batch: payload size mismatch");
  }
  batch.rows.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    batch.rows[i].values.resize(batch.dim);
    for (std::size_t d = 0; d < batch.dim; ++d) {
      batch.rows[i].values[d] = io::get_f32le(bytes, 12 + 4 * (i * batch.dim + d));
    }
  }
  return batch;
}

std::filesystem::path EmbeddingBatch::manifest_path_for(const std::filesystem::path& path) {
  std::filesystem::path m = path;
  m.replace_extension(".csv");
  return m;
}

void EmbeddingBatch::write(const std::filesystem::path& path) const {
  if (paths.size() != rows.size()) {
    throw InvalidArgument("embedding batch: one path per row required");
  }
  std::string csv = "index,path\n";
  for (std::size_t i = 0; i < paths.size(); ++i) {
    csv += std::to_string(i) + "," + paths[i] + "\n";
  }
  io::write_file_atomic(path, encode());
  io::write_file_atomic(manifest_path_for(path), csv);
}

EmbeddingBatch EmbeddingBatch::read(const std::filesystem::path& path) {
  EmbeddingBatch batch;
  try {
    batch = decode(io::read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  const auto manifest = manifest_path_for(path);
  std::ifstream in(manifest);
  if (!in) throw DataError("embedding batch manifest not found: " + manifest.string());
  std::string line;
  std::getline(in, line);
  if (line != "index,path") throw DataError(manifest.string() + ": bad header");
  batch.paths.assign(batch.rows.size(), {});
  std::vector<char> seen(batch.rows.size(), 0);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw DataError(manifest.string() + ": malformed row");
    std::size_t index = 0;
    try {
      index = std::stoul(line.substr(0, comma));
    } catch (const std::exception&) {
      throw DataError(manifest.string() + ": malformed index");
    }
    if (index >= batch.rows.size() || seen[index]) {
      throw DataError(manifest.string() + ": index out of range or repeated");
    }
    seen[index] = 1;
    batch.paths[index] = line.substr(comma + 1);
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    throw DataError(manifest.string() + ": missing rows");
  }
  return batch;
}

}  // namespace vlime
