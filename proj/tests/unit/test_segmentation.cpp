#include <random>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "vlime/error.hpp"
#include "vlime/segmentation.hpp"

using namespace vlime;

TEST_SUITE("segmentation") {

TEST_CASE("grid layout follows the aspect ratio") {
  CHECK(slic_grid(64, 64, 16) == std::pair{4, 4});
  CHECK(slic_grid(128, 64, 8) == std::pair{4, 2});
  const auto [cols, rows] = slic_grid(100, 100, 75);
  CHECK(cols * rows <= 75);
  CHECK(slic_grid(10, 1, 5) == std::pair{5, 1});
}

TEST_CASE("random images give valid partitions with k_actual <= k_target") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> size(16, 64);
  std::uniform_int_distribution<int> ks(1, 75);
  for (int trial = 0; trial < 25; ++trial) {
    const int w = size(rng);
    const int h = size(rng);
    const int channels = trial % 3 == 0 ? 1 : 3;
    const Image img = oracle::random_image(w, h, channels, rng);
    const int k = ks(rng);
    const SuperpixelMap sp = slic_segment(img, {k, 10.0, 10});
    CAPTURE(w);
    CAPTURE(h);
    CAPTURE(k);
    CHECK(oracle::check_partition(sp).empty());
    CHECK(sp.count() >= 1);
    CHECK(sp.count() <= k);
  }
}

TEST_CASE("segmentation is deterministic") {
  std::mt19937_64 rng(22);
  const Image img = oracle::random_image(48, 40, 3, rng);
  CHECK(slic_segment(img, {}) == slic_segment(img, {}));
}

TEST_CASE("grid-aligned blocks are recovered exactly") {
  std::mt19937_64 rng(23);
  const Image img = oracle::block_image(64, 64, 3, 16, rng);
  const SuperpixelMap sp = slic_segment(img, {16, 10.0, 10});
  REQUIRE(sp.count() == 16);
  for (int by = 0; by < 4; ++by) {
    for (int bx = 0; bx < 4; ++bx) {
      const int l = sp.label(bx * 16, by * 16);
      for (int y = by * 16; y < by * 16 + 16; ++y) {
        for (int x = bx * 16; x < bx * 16 + 16; ++x) CHECK(sp.label(x, y) == l);
      }
    }
  }
}

TEST_CASE("single target and one superpixel per pixel") {
  std::mt19937_64 rng(24);
  const Image img = oracle::random_image(5, 4, 3, rng);
  const SuperpixelMap one = slic_segment(img, {1, 10.0, 10});
  CHECK(one.count() == 1);
  const SuperpixelMap all = slic_segment(img, {20, 10.0, 10});
  CHECK(oracle::check_partition(all).empty());
  CHECK(all.count() <= 20);
}

TEST_CASE("invalid parameters") {
  const Image img(8, 8, 3);
  CHECK_THROWS_AS(slic_segment(img, {0, 10.0, 10}), InvalidArgument);
  CHECK_THROWS_AS(slic_segment(img, {65, 10.0, 10}), InvalidArgument);
  CHECK_THROWS_AS(slic_segment(img, {4, 0.0, 10}), InvalidArgument);
  CHECK_THROWS_AS(slic_segment(img, {4, 10.0, 0}), InvalidArgument);
}

TEST_CASE("SuperpixelMap rejects invalid label arrays") {
  CHECK_NOTHROW(SuperpixelMap(2, 2, {0, 0, 1, 1}));
  // Label 0 split in two pieces.
  CHECK_THROWS_AS(SuperpixelMap(3, 1, {0, 1, 0}), InvalidArgument);
  // Label 1 missing.
  CHECK_THROWS_AS(SuperpixelMap(2, 1, {0, 2}), InvalidArgument);
  CHECK_THROWS_AS(SuperpixelMap(2, 2, {0, 0, 0}), InvalidArgument);
  // Diagonal contact is not 4-connectivity.
  CHECK_THROWS_AS(SuperpixelMap(2, 2, {0, 1, 1, 0}), InvalidArgument);
}

TEST_CASE("region sizes sum to the pixel count") {
  std::mt19937_64 rng(25);
  const Image img = oracle::random_image(30, 20, 3, rng);
  const SuperpixelMap sp = slic_segment(img, {12, 10.0, 10});
  std::size_t total = 0;
  for (auto s : sp.region_sizes()) {
    CHECK(s > 0);
    total += s;
  }
  CHECK(total == 600);
}

TEST_CASE("boundary overlay marks label changes only") {
  Image img(4, 2, 3, 50);
  const SuperpixelMap sp(4, 2, {0, 0, 1, 1, 0, 0, 1, 1});
  const Image out = boundary_overlay(img, sp, Fill{255, 0, 0});
  CHECK(out.at(0, 0, 0) == 50);
  std::set<int> marked_columns;
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 4; ++x) {
      if (out.at(x, y, 0) == 255) marked_columns.insert(x);
    }
  }
  CHECK(!marked_columns.empty());
  for (int x : marked_columns) CHECK((x == 1 || x == 2));
  const SuperpixelMap single(4, 2, std::vector<int>(8, 0));
  CHECK(boundary_overlay(img, single, Fill{255, 0, 0}) == img);
}

}
