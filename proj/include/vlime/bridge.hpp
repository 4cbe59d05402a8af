#pragma once

#include <chrono>
#include <filesystem>
#include <mutex>
#include <string>
#include <vector>

#include "vlime/embedding.hpp"

namespace vlime {

/// Environment variable that, when set, replaces the bridge executable
/// (argv[0]) of every bridge command line.
inline constexpr const char* kBridgeEnvVar = "VLIME_BRIDGE";

struct BridgeOptions {
  std::vector<std::string> argv;
  // Perturbed images are written here as PNG before each request. Defaults
  // to a fresh directory under the system temp path.
  std::filesystem::path scratch_dir;
  std::chrono::milliseconds timeout{120000};
};

/// Client side of the JSON-lines embedding bridge.
///
/// Requests are one JSON object per line on the child's stdin:
///   {"op":"hello","id":0}
///   {"op":"embed","id":N,"image":"/abs/path.png","flip":false}
///   {"op":"shutdown","id":N}
/// and each gets exactly one reply line, {"id":N,"embedding":[...]} or
/// {"id":N,"error":"..."}. The hello reply also carries "name", "dim" and an
/// optional "preferred_fill" triple.
///
/// The channel is serial: one request in flight, guarded by a mutex.
class BridgeEmbedder final : public Embedder {
 public:
  explicit BridgeEmbedder(BridgeOptions options);
  ~BridgeEmbedder() override;

  BridgeEmbedder(const BridgeEmbedder&) = delete;
  BridgeEmbedder& operator=(const BridgeEmbedder&) = delete;

  const EmbedderDescriptor& descriptor() const override { return desc_; }
  Embedding embed(const Image& img) const override;
  bool concurrent() const override { return false; }

  /// Embeds an image file that already exists on disk.
  Embedding embed_file(const std::filesystem::path& path, bool flip = false) const;

  /// Number of embed requests answered successfully.
  std::size_t completed() const;

 private:
  std::string round_trip(const std::string& request, long id) const;
  void shutdown() noexcept;

  BridgeOptions options_;
  EmbedderDescriptor desc_;
  bool owns_scratch_ = false;
  int pid_ = -1;
  int fd_ = -1;
  mutable std::mutex mutex_;
  mutable long next_id_ = 1;
  mutable std::size_t completed_ = 0;
  mutable std::string pending_;
};

/// Splits a command line on whitespace, honouring single and double quotes.
std::vector<std::string> split_command_line(const std::string& command);

}  // namespace vlime
