#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vlime/embedding.hpp"
#include "vlime/raster.hpp"

namespace vlime {

enum class Pose { kFrontal, kThreeQuarter, kProfile, kUntagged };

/// Accepts "frontal"/"F", "three-quarter"/"3/4", "profile"/"P", "untagged".
Pose parse_pose(const std::string& text);
std::string to_string(Pose pose);
/// Short form used in reports: F, 3/4, P, U.
std::string short_name(Pose pose);

struct ImageRef {
  std::string path;                // as written in the manifest
  std::filesystem::path resolved;  // relative paths resolved against the manifest
  Pose pose = Pose::kUntagged;
};

struct Subject {
  std::string id;
  std::vector<ImageRef> images;
};

/// Ordered subjects, each with an ordered list of images.
///
/// JSON form: {"subjects": [{"id": "...", "images": [{"path": "...",
/// "pose": "frontal"}, ...]}, ...]}. "pose" is optional (untagged).
class DatasetManifest {
 public:
  DatasetManifest() = default;
  explicit DatasetManifest(std::vector<Subject> subjects);

  static DatasetManifest load(const std::filesystem::path& path);
  static DatasetManifest parse(const std::string& json_text,
                               const std::filesystem::path& base_dir);

  const std::vector<Subject>& subjects() const { return subjects_; }
  std::size_t image_count() const { return offsets_.empty() ? 0 : offsets_.back(); }
  /// Position of (subject, image) in manifest order.
  std::size_t flat_index(std::size_t subject, std::size_t image) const {
    return offsets_[subject] + image;
  }
  const ImageRef& image(std::size_t flat) const;

  /// Throws DataError naming the first image whose file does not exist.
  void check_files() const;

 private:
  std::vector<Subject> subjects_;
  std::vector<std::size_t> offsets_;  // size subjects+1
};

struct Pair {
  std::size_t subject_a = 0;
  std::size_t image_a = 0;
  std::size_t subject_b = 0;
  std::size_t image_b = 0;

  bool operator==(const Pair&) const = default;
};

struct PairList {
  std::vector<Pair> genuine;
  std::vector<Pair> impostor;
};

struct PoseFilter {
  Pose a = Pose::kFrontal;
  Pose b = Pose::kFrontal;
};

/// "F:P", "3/4:3/4", "frontal:profile", ...; "overall" or "all" -> nullopt.
std::optional<PoseFilter> parse_pose_filter(const std::string& text);

/// Genuine: every unordered same-subject pair (i < j). Impostor: the first
/// image of subject s against the second image of subjects s+1 .. s+J,
/// J = min(100, S-1), wrapping circularly over the subject list.
///
/// With a pose filter (A, B), genuine pairs are those whose two poses are
/// {A, B} in either order, and the impostor rule uses the first pose-A image
/// of s and the second pose-B image of the other subject.
PairList generate_pairs(const DatasetManifest& manifest,
                        const std::optional<PoseFilter>& filter = std::nullopt,
                        std::size_t impostor_span = 100);

struct ScoredPair {
  Pair pair;
  double score = 0.0;
};

struct ScoreSet {
  std::vector<ScoredPair> genuine;
  std::vector<ScoredPair> impostor;
  std::size_t failed_pairs = 0;
  std::vector<std::string> failures;  // one message per failed image

  std::vector<double> genuine_scores() const;
  std::vector<double> impostor_scores() const;
};

/// Source of per-image verification descriptors.
class DescriptorSource {
 public:
  virtual ~DescriptorSource() = default;
  virtual Embedding descriptor(std::size_t flat_index, const ImageRef& ref) const = 0;
  virtual bool concurrent() const { return true; }
};

using ImageProvider = std::function<Image(std::size_t flat_index, const ImageRef& ref)>;

/// Reads ref.resolved from disk.
ImageProvider disk_images();
/// Serves images[flat_index]; the vector must outlive the provider.
ImageProvider memory_images(const std::vector<Image>& images);

/// Flip-averaged descriptors from a live embedder, rounded to single
/// precision (the .emb storage precision) so live and offline scoring agree
/// bit for bit. Optionally memoized by image content.
class LiveDescriptors final : public DescriptorSource {
 public:
  LiveDescriptors(const Embedder& embedder, ImageProvider images,
                  EmbeddingCache* cache = nullptr);

  Embedding descriptor(std::size_t flat_index, const ImageRef& ref) const override;
  bool concurrent() const override { return embedder_.concurrent(); }

 private:
  const Embedder& embedder_;
  ImageProvider images_;
  EmbeddingCache* cache_;
};

/// Descriptors looked up by manifest path in a precomputed .emb batch.
class PrecomputedDescriptors final : public DescriptorSource {
 public:
  explicit PrecomputedDescriptors(EmbeddingBatch batch);

  Embedding descriptor(std::size_t flat_index, const ImageRef& ref) const override;

 private:
  EmbeddingBatch batch_;
  std::map<std::string, std::size_t> index_;
};

/// Descriptors for every image in the manifest order; failures leave an
/// empty optional and a message.
struct DescriptorTable {
  std::vector<std::optional<Embedding>> rows;
  std::vector<std::string> failures;
};

DescriptorTable compute_descriptors(const DatasetManifest& manifest,
                                    const DescriptorSource& source,
                                    std::span<const std::size_t> flat_indices,
                                    int workers = 1);

/// score = cosine_similarity of the two images' descriptors. Pairs touching
/// an image whose descriptor failed are dropped and counted.
ScoreSet score_pairs(const DatasetManifest& manifest, const PairList& pairs,
                     const DescriptorSource& source, int workers = 1);

struct EerResult {
  double eer_percent = 0.0;
  double threshold = 0.0;
  double far = 0.0;
  double frr = 0.0;
};

/// Threshold sweep over -inf, the midpoints of adjacent distinct pooled
/// scores, and +inf, with FRR(t) = #{genuine < t}/G and FAR(t) =
/// #{impostor >= t}/I. Returns (FAR+FRR)/2 in percent at the threshold
/// minimizing |FAR - FRR|, smallest such threshold on ties.
EerResult eer(std::span<const double> genuine, std::span<const double> impostor);
EerResult eer(const ScoreSet& scores);

/// a*s1 + (1-a)*s2, a in [0, 1].
double fuse_scores(double s1, double s2, double a);

struct FusionPoint {
  double a = 0.0;
  double eer_percent = 0.0;
};

struct FusionSweep {
  std::vector<FusionPoint> points;
  std::size_t best = 0;  // index of the lowest EER (first on ties)
};

/// Fuses the two score sets pair by pair for a = 0, step, 2*step, ..., 1.
/// Both sets must list identical pairs in identical order.
FusionSweep fusion_sweep(const ScoreSet& set1, const ScoreSet& set2, double step);

/// CSV with header `type,subject_a,image_a,subject_b,image_b,score`; the
/// genuine block precedes the impostor block. Scores use %.17g.
std::string scores_to_csv(const DatasetManifest& manifest, const ScoreSet& scores);

/// Parses a score CSV. Pairs are identified by their text fields; the
/// returned ScoreSet indexes them by row position, so two CSVs over the same
/// pair list compare equal pair by pair.
struct ScoreTable {
  struct Row {
    std::string type, subject_a, image_a, subject_b, image_b;
    double score = 0.0;
  };
  std::vector<Row> rows;

  static ScoreTable parse(const std::string& csv);
  ScoreSet to_score_set() const;
  bool same_pairs(const ScoreTable& other) const;
};

}  // namespace vlime
