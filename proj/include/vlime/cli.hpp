#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "vlime/embedding.hpp"

namespace vlime::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kData = 2,
  kEmbedder = 3,
  kNumerical = 4,
};

/// Parsed embedder specification.
///
///   region[:zone=1,gain=10]
///   projection[:seed=7,dim=64]
///   constant[:dim=8,value=1]
///   <builtin>:...,scale=7.3      wraps the result in ScaledEmbedder
///   emb:<path.emb>               precomputed descriptors (verify only)
///   bridge:<command line>        external JSON-lines bridge
struct EmbedderSpec {
  std::string kind;
  std::string argument;  // path (emb) or command line (bridge)
  std::vector<std::pair<std::string, std::string>> params;
};

EmbedderSpec parse_embedder_spec(const std::string& text);

/// Builds a live embedder; "emb" specs raise InvalidArgument.
std::shared_ptr<const Embedder> make_embedder(const EmbedderSpec& spec);
std::shared_ptr<const Embedder> make_embedder(const std::string& text);

/// Runs one command. args excludes the program name. Diagnostics go to err,
/// informational output to out. Returns an ExitCode.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vlime::cli
