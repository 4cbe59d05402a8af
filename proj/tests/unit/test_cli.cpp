#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"
#include "vlime/cli.hpp"
#include "vlime/error.hpp"
#include "vlime/image_io.hpp"

namespace fs = std::filesystem;
using namespace vlime;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Result r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Fresh directory with 3 subjects x 4 block images (poses F, P, F, P) and a manifest.
struct Workspace {
  fs::path root;

  explicit Workspace(const std::string& name) {
    root = fs::temp_directory_path() / ("vlime_cli_" + name);
    fs::remove_all(root);
    fs::create_directories(root / "img");
    std::mt19937_64 rng(name.size());
    nlohmann::json subjects = nlohmann::json::array();
    for (int s = 0; s < 3; ++s) {
      nlohmann::json images = nlohmann::json::array();
      for (int i = 0; i < 4; ++i) {
        const std::string rel = "img/s" + std::to_string(s) + "_" + std::to_string(i) + ".png";
        io::write_image(root / rel, oracle::block_image(32, 32, 3, 8, rng));
        images.push_back({{"path", rel}, {"pose", i % 2 == 0 ? "frontal" : "profile"}});
      }
      subjects.push_back({{"id", "s" + std::to_string(s)}, {"images", images}});
    }
    std::ofstream(root / "manifest.json") << nlohmann::json{{"subjects", subjects}}.dump();
  }
  ~Workspace() { fs::remove_all(root); }

  std::string path(const std::string& rel) const { return (root / rel).string(); }
};

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("version and usage errors") {
  const auto v = run({"--version"});
  CHECK(v.code == 0);
  CHECK(v.out.find(cli::kVersion) != std::string::npos);
  CHECK(run({}).code == cli::kUsage);
  CHECK(run({"frobnicate"}).code == cli::kUsage);
  CHECK(run({"explain", "--no-such-flag"}).code == cli::kUsage);
  CHECK(run({"explain", "--help"}).code == cli::kOk);
  CHECK(run({"explain", "-i", "x.png", "-e", "region:zone=9"}).code == cli::kUsage);
  CHECK(run({"explain", "-i", "x.png", "-e", "region:bogus=1"}).code == cli::kUsage);
  CHECK(run({"explain", "-i", "x.png", "-e", "teleport"}).code == cli::kUsage);
  CHECK(run({"explain", "-i", "x.png", "--seed", "abc"}).code == cli::kUsage);
}

TEST_CASE("missing inputs are data errors naming the path") {
  Workspace ws("missing");
  const auto r = run({"explain", "-i", ws.path("nope.png"), "-e", "region", "-o", ws.path("out")});
  CHECK(r.code == cli::kData);
  CHECK(r.err.find("nope.png") != std::string::npos);
  CHECK(run({"verify", "-m", ws.path("absent.json"), "-e", "region", "-o", ws.path("v")}).code ==
        cli::kData);
}

TEST_CASE("zero reference embedding is a numerical error") {
  Workspace ws("zero");
  const auto r = run({"explain", "-i", ws.path("img/s0_0.png"), "-e", "constant:value=0", "-n",
                      "10", "-o", ws.path("out")});
  CHECK(r.code == cli::kNumerical);
}

TEST_CASE("explain is deterministic and writes its artifacts") {
  Workspace ws("explain");
  for (const char* dir : {"a", "b"}) {
    const auto r = run({"explain", "-m", ws.path("manifest.json"), "-e", "region", "-n", "40",
                        "-k", "16", "--seed", "5", "--masks", "-j", "2", "-o", ws.path(dir)});
    REQUIRE(r.code == 0);
  }
  for (const char* stem : {"s0__s0_0", "s2__s2_1"}) {
    for (const char* ext : {".hm", ".png", ".masks.csv"}) {
      const std::string name = std::string(stem) + ext;
      REQUIRE(fs::exists(ws.root / "a" / name));
      CHECK(slurp(ws.root / "a" / name) == slurp(ws.root / "b" / name));
    }
    const auto fit = nlohmann::json::parse(slurp(ws.root / "a" / (std::string(stem) + ".fit.json")));
    CHECK(fit["queries"] == 41);
    CHECK(fit["embedder"]["name"] == "region");
  }
  const auto run_json = nlohmann::json::parse(slurp(ws.root / "a" / "run.json"));
  CHECK(run_json["seed"] == 5);
  CHECK(run_json["config"]["explain"]["n_samples"] == 40);
}

TEST_CASE("flags override the config file") {
  Workspace ws("config");
  std::ofstream(ws.root / "cfg.json") << R"({"explain": {"n_samples": 25, "k_target": 8}})";
  const std::string img = ws.path("img/s1_0.png");
  REQUIRE(run({"explain", "-c", ws.path("cfg.json"), "-i", img, "-e", "region", "-o",
               ws.path("c1")}).code == 0);
  REQUIRE(run({"explain", "-c", ws.path("cfg.json"), "-i", img, "-e", "region", "-n", "12", "-o",
               ws.path("c2")}).code == 0);
  const auto f1 = nlohmann::json::parse(slurp(ws.root / "c1" / "s1_0.fit.json"));
  const auto f2 = nlohmann::json::parse(slurp(ws.root / "c2" / "s1_0.fit.json"));
  CHECK(f1["queries"] == 26);
  CHECK(f2["queries"] == 13);
  CHECK(f2["config"]["k_target"] == 8);
  std::ofstream(ws.root / "bad.json") << "{";
  CHECK(run({"explain", "-c", ws.path("bad.json"), "-i", img, "-e", "region"}).code == cli::kUsage);
}

TEST_CASE("psnr-hist row agrees with psnr") {
  Workspace ws("psnr");
  fs::create_directories(ws.root / "a");
  fs::create_directories(ws.root / "b");
  Heatmap a(8, 8, 0.25);
  Heatmap b(8, 8, 0.35);
  io::write_heatmap(ws.root / "a" / "x.hm", a);
  io::write_heatmap(ws.root / "b" / "x.hm", b);
  io::write_heatmap(ws.root / "a" / "y.hm", a);
  io::write_heatmap(ws.root / "b" / "y.hm", a);
  REQUIRE(run({"psnr-hist", "--dir-a", ws.path("a"), "--dir-b", ws.path("b"), "-o",
               ws.path("out")}).code == 0);
  const std::string csv = slurp(ws.root / "out" / "psnr.csv");
  const auto comma = csv.find("x.hm,");
  REQUIRE(comma != std::string::npos);
  const double row = std::stod(csv.substr(comma + 5));
  const double direct = psnr(io::read_heatmap(ws.root / "a" / "x.hm"),
                             io::read_heatmap(ws.root / "b" / "x.hm"));
  CHECK(row == direct);
  CHECK(row == doctest::Approx(20.0).epsilon(1e-5));
  CHECK(slurp(ws.root / "out" / "psnr_infinite.csv") == "file\ny.hm\n");

  fs::remove(ws.root / "b" / "y.hm");
  CHECK(run({"psnr-hist", "--dir-a", ws.path("a"), "--dir-b", ws.path("b"), "-o",
             ws.path("out2")}).code == cli::kData);
}

TEST_CASE("verify live and from an embedding batch agree byte for byte") {
  Workspace ws("verify");
  const std::string m = ws.path("manifest.json");
  REQUIRE(run({"verify", "-m", m, "-e", "projection:seed=3", "-o", ws.path("live")}).code == 0);
  REQUIRE(run({"embed-batch", "-m", m, "-e", "projection:seed=3", "--output", "batch.emb", "-o",
               ws.path("emb")}).code == 0);
  CHECK(fs::file_size(ws.root / "emb" / "batch.emb") == 12 + 12 * 64 * 4);
  REQUIRE(run({"verify", "-m", m, "-e", "emb:" + ws.path("emb/batch.emb"), "-o", ws.path("off")})
              .code == 0);
  CHECK(slurp(ws.root / "live" / "scores.csv") == slurp(ws.root / "off" / "scores.csv"));
  const auto report = nlohmann::json::parse(slurp(ws.root / "live" / "eer.json"));
  CHECK(report["n_genuine"] == 18);
  CHECK(report["n_impostor"] == 6);
  CHECK(report["eer_percent"].get<double>() >= 0.0);

  REQUIRE(run({"verify", "-m", m, "-e", "region", "--pose", "F:P", "-o", ws.path("pose")}).code == 0);
  CHECK(nlohmann::json::parse(slurp(ws.root / "pose" / "eer.json"))["n_genuine"] == 12);
  REQUIRE(run({"verify", "-m", m, "-e", "region", "--pose", "F:F", "-o", ws.path("ff")}).code == 0);
  CHECK(nlohmann::json::parse(slurp(ws.root / "ff" / "eer.json"))["n_genuine"] == 3);
  CHECK(run({"verify", "-m", m, "-e", "region", "--pose", "3/4:3/4", "-o", ws.path("tq")}).code ==
        cli::kData);
}

TEST_CASE("fuse-sweep over two score files") {
  Workspace ws("fuse");
  const std::string m = ws.path("manifest.json");
  REQUIRE(run({"verify", "-m", m, "-e", "projection:seed=1", "-o", ws.path("one")}).code == 0);
  REQUIRE(run({"verify", "-m", m, "-e", "projection:seed=2", "-o", ws.path("two")}).code == 0);
  REQUIRE(run({"fuse-sweep", "--scores-a", ws.path("one/scores.csv"), "--scores-b",
               ws.path("two/scores.csv"), "--step", "0.25", "-o", ws.path("fz")}).code == 0);
  const auto report = nlohmann::json::parse(slurp(ws.root / "fz" / "fusion.json"));
  const std::string csv = slurp(ws.root / "fz" / "fusion.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
  const auto e1 = nlohmann::json::parse(slurp(ws.root / "one" / "eer.json"))["eer_percent"];
  const auto e2 = nlohmann::json::parse(slurp(ws.root / "two" / "eer.json"))["eer_percent"];
  CHECK(report["eer_a1"] == e1);
  CHECK(report["eer_a0"] == e2);
  CHECK(report["best_eer_percent"].get<double>() <= std::min(e1.get<double>(), e2.get<double>()));
}

TEST_CASE("ablate is deterministic") {
  Workspace ws("ablate");
  const std::string m = ws.path("manifest.json");
  REQUIRE(run({"explain", "-m", m, "-e", "region", "-n", "30", "-k", "16", "-o", ws.path("h")})
              .code == 0);
  for (const char* dir : {"a1", "a2"}) {
    REQUIRE(run({"ablate", "-m", m, "-e", "region", "--heatmaps", ws.path("h"), "--thresholds",
                 "1.0,0.5", "--seed", "3", "-o", ws.path(dir)}).code == 0);
  }
  CHECK(slurp(ws.root / "a1" / "ablation.csv") == slurp(ws.root / "a2" / "ablation.csv"));
  CHECK(slurp(ws.root / "a1" / "ablation_t0.5.csv") == slurp(ws.root / "a2" / "ablation_t0.5.csv"));
  CHECK(run({"ablate", "-m", m, "-e", "region", "--heatmaps", ws.path("nowhere"), "--thresholds",
             "0.5", "-o", ws.path("a3")}).code == cli::kData);
}

TEST_CASE("segment and avgmap") {
  Workspace ws("segment");
  REQUIRE(run({"segment", "-i", ws.path("img/s0_0.png"), "-k", "16", "-o", ws.path("seg")}).code == 0);
  CHECK(fs::exists(ws.root / "seg" / "s0_0.labels.pgm"));
  CHECK(fs::exists(ws.root / "seg" / "segments.csv"));
  fs::create_directories(ws.root / "maps");
  io::write_heatmap(ws.root / "maps" / "a.hm", Heatmap(4, 4, 0.2));
  io::write_heatmap(ws.root / "maps" / "b.hm", Heatmap(4, 4, 0.6));
  REQUIRE(run({"avgmap", "--input", ws.path("maps"), "--output", "avg.hm", "-o", ws.path("avg")})
              .code == 0);
  CHECK(fs::exists(ws.root / "avg" / "run.json"));
  CHECK(fs::exists(ws.root / "avg" / "avg.png"));
  const Heatmap avg = io::read_heatmap(ws.root / "avg" / "avg.hm");
  CHECK(avg.at(1, 1) == doctest::Approx(0.4).epsilon(1e-6));
}

TEST_CASE("embedder specs") {
  const auto spec = cli::parse_embedder_spec("region:zone=3,gain=2.5");
  CHECK(spec.kind == "region");
  CHECK(spec.params.size() == 2);
  CHECK(cli::make_embedder("region:zone=3")->descriptor().dim == 8);
  CHECK(cli::make_embedder("projection:dim=12")->descriptor().dim == 12);
  CHECK(cli::make_embedder("constant:dim=3,scale=7.3")->descriptor().dim == 3);
  CHECK(cli::parse_embedder_spec("emb:/x/y.emb").argument == "/x/y.emb");
  CHECK(cli::parse_embedder_spec("bridge:python m.py --a 1").argument == "python m.py --a 1");
  CHECK_THROWS_AS(cli::make_embedder("emb:/x/y.emb"), InvalidArgument);
  CHECK_THROWS_AS(cli::make_embedder("projection:dim=0"), InvalidArgument);
  CHECK_THROWS_AS(cli::make_embedder("region:zone=x"), InvalidArgument);
}

}
