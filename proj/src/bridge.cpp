#include "vlime/bridge.hpp"

#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <json.hpp>
#include <random>

#include "vlime/error.hpp"
#include "vlime/image_io.hpp"

extern char** environ;

namespace vlime {

namespace {

using json = nlohmann::json;

std::filesystem::path make_scratch_dir() {
  std::random_device rd;
  for (int attempt = 0; attempt < 16; ++attempt) {
    auto dir = std::filesystem::temp_directory_path() /
               ("vlime-bridge-" + std::to_string(::getpid()) + "-" + std::to_string(rd()));
    if (std::filesystem::create_directory(dir)) return dir;
  }
  throw EmbedderError("cannot create bridge scratch directory");
}

}  // namespace

std::vector<std::string> split_command_line(const std::string& command) {
  std::vector<std::string> out;
  std::string cur;
  bool in_token = false;
  char quote = 0;
  for (char ch : command) {
    if (quote) {
      if (ch == quote) {
        quote = 0;
      } else {
        cur += ch;
      }
    } else if (ch == '\'' || ch == '"') {
      quote = ch;
      in_token = true;
    } else if (std::isspace(static_cast<unsigned char>(ch))) {
      if (in_token) out.push_back(std::move(cur));
      cur.clear();
      in_token = false;
    } else {
      cur += ch;
      in_token = true;
    }
  }
  if (quote) throw InvalidArgument("unterminated quote in command line: " + command);
  if (in_token) out.push_back(std::move(cur));
  return out;
}

BridgeEmbedder::BridgeEmbedder(BridgeOptions options) : options_(std::move(options)) {
  if (const char* override_exe = std::getenv(kBridgeEnvVar);
      override_exe && *override_exe) {
    if (options_.argv.empty()) {
      options_.argv.push_back(override_exe);
    } else {
      options_.argv[0] = override_exe;
    }
  }
  if (options_.argv.empty()) throw InvalidArgument("bridge: empty command line");
  if (options_.scratch_dir.empty()) {
    options_.scratch_dir = make_scratch_dir();
    owns_scratch_ = true;
  } else {
    std::filesystem::create_directories(options_.scratch_dir);
  }

  int sv[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, sv) != 0) {
    throw EmbedderError(std::string("bridge: socketpair failed: ") + std::strerror(errno));
  }
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, sv[1], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, sv[1], STDOUT_FILENO);
  std::vector<char*> argv;
  for (auto& a : options_.argv) argv.push_back(a.data());
  argv.push_back(nullptr);
  pid_t pid = -1;
  const int rc = ::posix_spawnp(&pid, argv[0], &actions, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  ::close(sv[1]);
  if (rc != 0) {
    ::close(sv[0]);
    throw EmbedderError("bridge: cannot start '" + options_.argv[0] +
                        "': " + std::strerror(rc));
  }
  pid_ = pid;
  fd_ = sv[0];

  try {
    const json hello = json::parse(round_trip(R"({"op":"hello","id":0})", 0));
    if (hello.contains("error")) {
      throw EmbedderError("bridge hello failed: " + hello["error"].dump());
    }
    desc_.name = hello.at("name").get<std::string>();
    const long dim = hello.at("dim").get<long>();
    if (dim < 1) throw EmbedderError("bridge declared dim < 1");
    desc_.dim = static_cast<std::size_t>(dim);
    desc_.kind = EmbedderKind::kBridge;
    if (hello.contains("preferred_fill")) {
      const auto& f = hello["preferred_fill"];
      if (!f.is_array() || f.size() != 3) {
        throw EmbedderError("bridge preferred_fill must be a triple");
      }
      desc_.preferred_fill = {f[0].get<std::uint8_t>(), f[1].get<std::uint8_t>(),
                              f[2].get<std::uint8_t>()};
    }
  } catch (const json::exception& e) {
    shutdown();
    throw EmbedderError(std::string("bridge: malformed hello reply: ") + e.what());
  } catch (...) {
    shutdown();
    throw;
  }
}

BridgeEmbedder::~BridgeEmbedder() { shutdown(); }

void BridgeEmbedder::shutdown() noexcept {
  if (fd_ >= 0) {
    const std::string line =
        json{{"op", "shutdown"}, {"id", next_id_++}}.dump() + "\n";
    (void)::send(fd_, line.data(), line.size(), MSG_NOSIGNAL);
    ::shutdown(fd_, SHUT_WR);
  }
  if (pid_ > 0) {
    int status = 0;
    bool reaped = false;
    for (int i = 0; i < 200 && !reaped; ++i) {
      if (::waitpid(pid_, &status, WNOHANG) == pid_) {
        reaped = true;
      } else {
        ::usleep(10000);
      }
    }
    if (!reaped) {
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, &status, 0);
    }
    pid_ = -1;
  }
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
  if (owns_scratch_) {
    std::error_code ec;
    std::filesystem::remove_all(options_.scratch_dir, ec);
    owns_scratch_ = false;
  }
}

std::string BridgeEmbedder::round_trip(const std::string& request, long id) const {
  const std::string line = request + "\n";
  std::size_t sent = 0;
  while (sent < line.size()) {
    const ssize_t n = ::send(fd_, line.data() + sent, line.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw EmbedderError("bridge: write failed (process exited?)");
    }
    sent += static_cast<std::size_t>(n);
  }

  const auto deadline = std::chrono::steady_clock::now() + options_.timeout;
  for (;;) {
    if (auto nl = pending_.find('\n'); nl != std::string::npos) {
      std::string reply = pending_.substr(0, nl);
      pending_.erase(0, nl + 1);
      json parsed;
      try {
        parsed = json::parse(reply);
      } catch (const json::exception&) {
        throw EmbedderError("bridge: malformed reply line: " + reply.substr(0, 200));
      }
      if (!parsed.is_object() || !parsed.contains("id") ||
          !parsed["id"].is_number_integer() || parsed["id"].get<long>() != id) {
        throw EmbedderError("bridge: reply id does not match request " +
                            std::to_string(id));
      }
      return reply;
    }
    const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (remaining.count() <= 0) throw EmbedderError("bridge: timed out waiting for reply");
    pollfd pfd{fd_, POLLIN, 0};
    const int pr = ::poll(&pfd, 1, static_cast<int>(remaining.count()));
    if (pr < 0) {
      if (errno == EINTR) continue;
      throw EmbedderError("bridge: poll failed");
    }
    if (pr == 0) throw EmbedderError("bridge: timed out waiting for reply");
    char buf[65536];
    const ssize_t n = ::recv(fd_, buf, sizeof(buf), 0);
    if (n == 0) throw EmbedderError("bridge: process closed the channel");
    if (n < 0) {
      if (errno == EINTR) continue;
      throw EmbedderError("bridge: read failed");
    }
    pending_.append(buf, static_cast<std::size_t>(n));
  }
}

Embedding BridgeEmbedder::embed_file(const std::filesystem::path& path, bool flip) const {
  std::lock_guard lock(mutex_);
  if (fd_ < 0) throw EmbedderError("bridge: channel closed");
  const long id = next_id_++;
  const json request = {{"op", "embed"},
                        {"id", id},
                        {"image", std::filesystem::absolute(path).string()},
                        {"flip", flip}};
  const json reply = json::parse(round_trip(request.dump(), id));
  if (reply.contains("error")) {
    throw EmbedderError("bridge error for " + path.string() + ": " +
                        reply["error"].dump());
  }
  Embedding e;
  try {
    e.values = reply.at("embedding").get<std::vector<double>>();
  } catch (const json::exception&) {
    throw EmbedderError("bridge: reply has no numeric 'embedding' array");
  }
  ++completed_;
  return e;
}

Embedding BridgeEmbedder::embed(const Image& img) const {
  char name[32];
  std::snprintf(name, sizeof(name), "%016llx.png",
                static_cast<unsigned long long>(content_hash(img)));
  const auto path = options_.scratch_dir / name;
  io::write_image(path, img);
  struct Remove {
    const std::filesystem::path& p;
    ~Remove() {
      std::error_code ec;
      std::filesystem::remove(p, ec);
    }
  } cleanup{path};
  return embed_file(path);
}

std::size_t BridgeEmbedder::completed() const {
  std::lock_guard lock(mutex_);
  return completed_;
}

}  // namespace vlime
