#include <filesystem>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "vlime/error.hpp"
#include "vlime/image_io.hpp"

using namespace vlime;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "vlime_io_tests";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_SUITE("image_io") {

TEST_CASE("PNG round trip, RGB and gray") {
  std::mt19937_64 rng(11);
  for (int channels : {1, 3}) {
    const Image img = oracle::random_image(13, 9, channels, rng);
    CHECK(io::decode_png(io::encode_png(img)) == img);
  }
  const std::vector<std::uint8_t> junk{1, 2, 3, 4, 5, 6, 7, 8, 9};
  CHECK_THROWS_AS(io::decode_png(junk), DataError);
}

TEST_CASE("PNM round trip") {
  std::mt19937_64 rng(12);
  for (int channels : {1, 3}) {
    const Image img = oracle::random_image(5, 4, channels, rng);
    const auto bytes = io::encode_pnm(img);
    CHECK(io::decode_pnm(bytes) == img);
  }
  const std::string header = "P6\n2 2\n255\n";
  CHECK_THROWS_AS(io::decode_pnm(std::vector<std::uint8_t>(header.begin(), header.end())),
                  DataError);
}

TEST_CASE("file I/O dispatches on extension") {
  std::mt19937_64 rng(13);
  const Image img = oracle::random_image(6, 6, 3, rng);
  for (const char* name : {"a.png", "a.ppm"}) {
    io::write_image(scratch(name), img);
    CHECK(io::read_image(scratch(name)) == img);
  }
  CHECK_THROWS_AS(io::read_image(scratch("missing.png")), DataError);
  CHECK_THROWS_AS(io::write_image(scratch("a.bmp"), img), Error);
}

TEST_CASE(".hm layout and round trip") {
  Heatmap m(3, 2, std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0, 0.125});
  const auto bytes = io::encode_heatmap(m);
  REQUIRE(bytes.size() == 4 + 4 + 4 + 6 * 4);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "HMAP");
  CHECK(io::get_u32le(bytes, 4) == 3);
  CHECK(io::get_u32le(bytes, 8) == 2);
  CHECK(io::get_f32le(bytes, 12 + 4 * 3) == 0.75f);
  CHECK(io::decode_heatmap(bytes) == m);

  io::write_heatmap(scratch("m.hm"), m);
  CHECK(io::read_heatmap(scratch("m.hm")) == m);

  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_AS(io::decode_heatmap(truncated), DataError);
}

TEST_CASE("heatmap PNG uses round(v*255)") {
  Heatmap m(2, 1, std::vector<double>{0.5, 1.0});
  const Image g = io::heatmap_to_gray(m);
  CHECK(g.channels() == 1);
  CHECK(g.at(0, 0, 0) == 128);
  CHECK(g.at(1, 0, 0) == 255);
}

TEST_CASE("16-bit label PGM") {
  const std::vector<int> labels{0, 1, 300, 2};
  io::write_label_pgm16(scratch("l.pgm"), 2, 2, labels);
  const auto bytes = io::read_file(scratch("l.pgm"));
  const std::string head = "P5\n2 2\n65535\n";
  REQUIRE(bytes.size() == head.size() + 8);
  CHECK(std::string(bytes.begin(), bytes.begin() + head.size()) == head);
  // Big-endian samples.
  CHECK(bytes[head.size() + 4] == 1);
  CHECK(bytes[head.size() + 5] == 44);
}

TEST_CASE("atomic write replaces content and leaves no temp file") {
  const fs::path p = scratch("atomic.txt");
  io::write_file_atomic(p, std::string("first"));
  io::write_file_atomic(p, std::string("second"));
  const auto bytes = io::read_file(p);
  CHECK(std::string(bytes.begin(), bytes.end()) == "second");
  for (const auto& e : fs::directory_iterator(p.parent_path())) {
    CHECK(e.path().filename().string().find(".tmp") == std::string::npos);
  }
}

}
