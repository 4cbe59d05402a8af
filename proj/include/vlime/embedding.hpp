#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "vlime/raster.hpp"

namespace vlime {

struct Embedding {
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }
  bool operator==(const Embedding&) const = default;
};

enum class EmbedderKind {
  kSyntheticRegion,
  kSyntheticConstant,
  kSyntheticProjection,
  kBridge,
};

std::string to_string(EmbedderKind kind);

struct EmbedderDescriptor {
  std::string name;
  std::size_t dim = 0;
  EmbedderKind kind = EmbedderKind::kSyntheticConstant;
  // Value that blacks a pixel out from the model's point of view (its input
  // normalization mean). Synthetic embedders use black.
  Fill preferred_fill{};
};

/// A black-box recognizer: maps an image to a feature vector.
///
/// Implementations must be deterministic. When concurrent() is true, embed()
/// may be called from several threads at once.
class Embedder {
 public:
  virtual ~Embedder() = default;

  virtual const EmbedderDescriptor& descriptor() const = 0;
  virtual Embedding embed(const Image& img) const = 0;
  virtual bool concurrent() const { return true; }
};

/// Calls embedder.embed and checks the result against the descriptor:
/// dimension and finiteness. Violations raise EmbedderError.
Embedding embed(const Embedder& embedder, const Image& img);

/// Returns the same vector for every image.
class ConstantEmbedder final : public Embedder {
 public:
  explicit ConstantEmbedder(std::vector<double> value, std::string name = "constant");

  const EmbedderDescriptor& descriptor() const override { return desc_; }
  Embedding embed(const Image& img) const override;

 private:
  EmbedderDescriptor desc_;
  Embedding value_;
};

/// Eight-zone mean-intensity embedder with one sensitive zone.
///
/// The image is split into a 2 x 4 grid of zones; zone z covers columns
/// [col*W/4, (col+1)*W/4) and rows [row*H/2, (row+1)*H/2) with z = 4*row +
/// col (integer division). m_z is the mean of all channel values in zone z
/// divided by 255. The output is
///
///   [ gain * m_R, m_z for z = 0..7, z != R (ascending) ]
///
/// so coordinate 0 only depends on pixels inside zone R.
class RegionEmbedder final : public Embedder {
 public:
  static constexpr int kZoneCols = 4;
  static constexpr int kZoneRows = 2;
  static constexpr int kZones = kZoneCols * kZoneRows;

  RegionEmbedder(int zone, double gain, std::string name = "region");

  const EmbedderDescriptor& descriptor() const override { return desc_; }
  Embedding embed(const Image& img) const override;

  int zone() const { return zone_; }
  double gain() const { return gain_; }

  /// Pixel rectangle [x0, x1) x [y0, y1) of `zone` for a width x height image.
  struct Rect {
    int x0, y0, x1, y1;
    bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  };
  static Rect zone_rect(int zone, int width, int height);

 private:
  EmbedderDescriptor desc_;
  int zone_;
  double gain_;
};

/// Fixed random linear map from pixel values (scaled to [0,1]) to `dim`
/// outputs. Weights are uniform in [-1, 1], drawn from Xoshiro256 seeded with
/// seed ^ hash(width, height, channels), and cached per image shape.
class ProjectionEmbedder final : public Embedder {
 public:
  explicit ProjectionEmbedder(std::uint64_t seed, std::size_t dim = 64,
                              std::string name = "projection");

  const EmbedderDescriptor& descriptor() const override { return desc_; }
  Embedding embed(const Image& img) const override;

 private:
  const std::vector<float>& weights_for(int w, int h, int c) const;

  EmbedderDescriptor desc_;
  std::uint64_t seed_;
  mutable std::shared_mutex mutex_;
  mutable std::map<std::tuple<int, int, int>, std::vector<float>> weights_;
};

/// Multiplies another embedder's output by a constant factor.
class ScaledEmbedder final : public Embedder {
 public:
  ScaledEmbedder(std::shared_ptr<const Embedder> inner, double factor);

  const EmbedderDescriptor& descriptor() const override { return desc_; }
  Embedding embed(const Image& img) const override;
  bool concurrent() const override { return inner_->concurrent(); }

 private:
  std::shared_ptr<const Embedder> inner_;
  double factor_;
  EmbedderDescriptor desc_;
};

/// Cosine of the angle between u and v, clamped to [-1, 1].
///
/// Both vectors are first reduced to single-precision unit directions, and the
/// cosine is taken between those. The result therefore depends only on the
/// directions of u and v: rescaling either argument by any positive factor
/// leaves it bit-identical (except when a component lands exactly on a float
/// rounding tie). Absolute error is about 1e-7. cos(u, u) is exactly 1.
/// Throws NumericalError when either norm is below 1e-12 or not finite.
double cosine_similarity(const Embedding& u, const Embedding& v);

/// Euclidean norm.
double norm(const Embedding& e);

/// Element-wise mean of embed(img) and embed(flip_horizontal(img)).
Embedding flip_averaged_descriptor(const Embedder& embedder, const Image& img);

/// Rounds every value to the nearest float (storage precision of .emb files).
Embedding to_single_precision(const Embedding& e);

/// Image -> score in [0, 1]; the response of the original LIME (class
/// probability) mode.
using ScalarProbe = std::function<double(const Image&)>;

/// Evaluates the probe and rejects values outside [0, 1] (EmbedderError).
double scalar_probe(const ScalarProbe& probe, const Image& img);

ScalarProbe constant_probe(double value);

/// cosine_similarity(embed(reference), embed(img)); the reference embedding
/// is computed once. A zero perturbed embedding scores 0.
ScalarProbe cosine_probe(std::shared_ptr<const Embedder> embedder, const Image& reference);

/// Fraction of the pixels inside `region` (row-major flags) whose value is
/// not the fill value in every channel, i.e. the unmasked area of the region.
ScalarProbe area_fraction_probe(std::vector<std::uint8_t> region, Fill fill);

/// 64-bit FNV-1a over the image geometry and pixel bytes.
std::uint64_t content_hash(const Image& img);

/// Thread-safe memo of embeddings keyed by (tag, image content hash).
class EmbeddingCache {
 public:
  std::optional<Embedding> find(const std::string& tag, std::uint64_t hash) const;
  void insert(const std::string& tag, std::uint64_t hash, Embedding e);
  std::size_t size() const;

  template <typename Compute>
  Embedding get_or_compute(const std::string& tag, const Image& img, Compute&& compute) {
    const std::uint64_t h = content_hash(img);
    if (auto hit = find(tag, h)) return *hit;
    Embedding e = compute();
    insert(tag, h, e);
    return e;
  }

 private:
  mutable std::shared_mutex mutex_;
  std::map<std::pair<std::string, std::uint64_t>, Embedding> entries_;
};

/// Offline embeddings: the ".emb" file ("EMB1", u32 LE count, u32 LE dim,
/// count*dim float32 LE) plus its sibling CSV manifest (index,path).
struct EmbeddingBatch {
  std::size_t dim = 0;
  std::vector<std::string> paths;
  std::vector<Embedding> rows;

  std::vector<std::uint8_t> encode() const;
  static EmbeddingBatch decode(std::span<const std::uint8_t> bytes);

  /// Writes `path` and `manifest_path_for(path)`.
  void write(const std::filesystem::path& path) const;
  static EmbeddingBatch read(const std::filesystem::path& path);
  static std::filesystem::path manifest_path_for(const std::filesystem::path& path);
};

}  // namespace vlime
