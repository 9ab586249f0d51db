#include "codo/proposals.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "codo/common.hpp"
#include "codo/geometry.hpp"
#include "doctest.h"

using codo::BoundingBox;
using codo::Image;
using codo::Rng;
namespace pr = codo::proposals;

namespace {

Image flat_image(int w, int h, std::uint8_t v) {
  Image img(w, h);
  std::fill(img.pixels.begin(), img.pixels.end(), v);
  return img;
}

Image noise_image(int w, int h, std::uint64_t seed) {
  Image img(w, h);
  Rng rng(seed);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(256));
  return img;
}

void fill_noise(Image& img, int x0, int y0, int x1, int y1, std::uint64_t seed) {
  Rng rng(seed);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(x, y, c) = static_cast<std::uint8_t>(rng.uniform_int(256));
}

pr::Proposal boxed(double w, double h) {
  return {{0.0, 0.0, w, h}, "img", 0.0};
}

}  // namespace

TEST_CASE("config validation rejects bad fraction bounds") {
  pr::ProposalGeneratorConfig cfg;
  cfg.min_box_fraction = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.min_box_fraction = 0.6;
  cfg.max_box_fraction = 0.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.min_box_fraction = 0.1;
  cfg.max_box_fraction = 1.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("zero candidate budget and undersized images yield empty lists") {
  Rng rng(1);
  pr::ProposalGeneratorConfig cfg;
  cfg.candidates_per_image = 0;
  CHECK(pr::generate_proposals(flat_image(32, 32, 100), "a", cfg, rng).empty());
  cfg.candidates_per_image = 8;
  CHECK(pr::generate_proposals(flat_image(3, 3, 100), "a", cfg, rng).empty());
}

TEST_CASE("energy sampler scores a uniform image identically everywhere") {
  Rng rng(2);
  pr::ProposalGeneratorConfig cfg;
  const auto props =
      pr::generate_proposals(flat_image(48, 48, 77), "flat", cfg, rng);
  REQUIRE(!props.empty());
  for (const auto& p : props) CHECK(p.score == doctest::Approx(0.0));
}

TEST_CASE("energy sampler ranks a textured square above the flat background") {
  Image img = flat_image(64, 64, 40);
  fill_noise(img, 16, 16, 48, 48, 9);
  const BoundingBox square{16.0, 16.0, 48.0, 48.0};

  pr::ProposalGeneratorConfig cfg;
  cfg.min_box_fraction = 0.2;
  cfg.max_box_fraction = 0.3;
  cfg.candidates_per_image = 64;
  Rng rng(3);
  const auto props = pr::generate_proposals(img, "sq", cfg, rng);
  REQUIRE(!props.empty());
  CHECK(codo::iou(props.front().box, square) >= 0.5);
}

TEST_CASE("graph segmentation recovers a flat square as its top component") {
  Image img = flat_image(64, 64, 30);
  for (int y = 16; y < 48; ++y)
    for (int x = 16; x < 48; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = 200;
  const BoundingBox square{16.0, 16.0, 48.0, 48.0};

  pr::ProposalGeneratorConfig cfg;
  cfg.strategy = pr::Strategy::graph_segmentation;
  Rng rng(4);
  const auto props = pr::generate_proposals(img, "sq", cfg, rng);
  REQUIRE(!props.empty());
  CHECK(codo::iou(props.front().box, square) >= 0.5);
}

TEST_CASE("generated boxes stay inside the image with in-range areas") {
  pr::ProposalGeneratorConfig cfg;
  for (const auto strategy :
       {pr::Strategy::energy_sampler, pr::Strategy::graph_segmentation}) {
    cfg.strategy = strategy;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      Rng rng(100 + seed);
      const Image img = noise_image(40 + static_cast<int>(seed) * 8, 36, seed);
      const double area = static_cast<double>(img.width) * img.height;
      const auto props = pr::generate_proposals(img, "n", cfg, rng);
      CHECK(static_cast<int>(props.size()) <= cfg.candidates_per_image);
      for (const auto& p : props) {
        CHECK(p.box.valid());
        CHECK(p.box.x0 >= 0.0);
        CHECK(p.box.y0 >= 0.0);
        CHECK(p.box.x1 <= img.width);
        CHECK(p.box.y1 <= img.height);
        CHECK(p.box.area() / area >= cfg.min_box_fraction - 1e-9);
        CHECK(p.box.area() / area <= cfg.max_box_fraction + 1e-9);
      }
    }
  }
}

TEST_CASE("aspect filter removes boundary ratios and keeps order") {
  std::vector<pr::Proposal> props;
  props.push_back(boxed(10.0, 10.0));  // 1.0, kept
  props.push_back(boxed(30.0, 10.0));  // 3.0, removed
  props.push_back(boxed(3.0, 10.0));   // 0.30, removed
  props.push_back(boxed(20.0, 10.0));  // 2.0, kept
  props.push_back(boxed(10.0, 30.0));  // 1/3, removed
  const auto kept = pr::filter_aspect_ratio(props);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].box.aspect() == doctest::Approx(1.0));
  CHECK(kept[1].box.aspect() == doctest::Approx(2.0));
}

TEST_CASE("aspect filter property over random boxes") {
  Rng rng(5);
  std::vector<pr::Proposal> props;
  props.reserve(10000);
  for (int i = 0; i < 10000; ++i)
    props.push_back(boxed(rng.uniform(0.5, 40.0), rng.uniform(0.5, 40.0)));
  std::size_t strict = 0;
  for (const auto& p : props) {
    const double r = p.box.aspect();
    if (r > 1.0 / 3.0 && r < 3.0) ++strict;
  }
  const auto kept = pr::filter_aspect_ratio(props);
  CHECK(kept.size() == strict);
  for (const auto& p : kept) {
    CHECK(p.box.aspect() > 1.0 / 3.0);
    CHECK(p.box.aspect() < 3.0);
  }
}

TEST_CASE("select_one draws uniformly, reproducibly, and rejects empty input") {
  std::vector<pr::Proposal> single{boxed(5.0, 5.0)};
  Rng rng(6);
  CHECK(&pr::select_one(single, rng) == &single[0]);

  std::vector<pr::Proposal> many;
  for (int i = 0; i < 7; ++i) many.push_back(boxed(4.0 + i, 4.0));
  Rng a(7), b(7);
  CHECK(&pr::select_one(many, a) == &pr::select_one(many, b));

  const std::vector<pr::Proposal> empty;
  Rng r(8);
  CHECK_THROWS_AS(pr::select_one(empty, r), codo::NoProposalError);

  for (const std::size_t len : {3u, 7u, 10u}) {
    std::vector<pr::Proposal> list;
    for (std::size_t i = 0; i < len; ++i)
      list.push_back(boxed(4.0 + static_cast<double>(i), 4.0));
    std::vector<int> counts(len, 0);
    Rng sweep(9);
    for (int t = 0; t < 10000; ++t) {
      const auto& chosen = pr::select_one(list, sweep);
      ++counts[static_cast<std::size_t>(&chosen - list.data())];
    }
    for (const int c : counts)
      CHECK(std::abs(c / 10000.0 - 1.0 / static_cast<double>(len)) < 0.05);
  }
}
