#include <doctest.h>

#include <cmath>
#include <numbers>

#include "bodycomp/preprocess.hpp"
#include "test_util.hpp"

using namespace bodycomp;

namespace {

// High-precision reference resize, structured differently from the library
// (per-pixel gather in long double).
Image resize_oracle(const Image& img, int ow, int oh) {
  Image out = Image::make(ow, oh, img.channels);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      const long double sy = std::clamp<long double>(
          (y + 0.5L) * img.height / oh - 0.5L, 0.0L, img.height - 1.0L);
      const long double sx = std::clamp<long double>(
          (x + 0.5L) * img.width / ow - 0.5L, 0.0L, img.width - 1.0L);
      const int y0 = static_cast<int>(sy);
      const int x0 = static_cast<int>(sx);
      const int y1 = std::min(y0 + 1, img.height - 1);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const long double fy = sy - y0;
      const long double fx = sx - x0;
      for (int c = 0; c < img.channels; ++c) {
        const long double v =
            (1 - fy) * ((1 - fx) * img.at(x0, y0, c) + fx * img.at(x1, y0, c)) +
            fy * ((1 - fx) * img.at(x0, y1, c) + fx * img.at(x1, y1, c));
        out.at(x, y, c) = static_cast<std::uint8_t>(std::llround(static_cast<double>(v)));
      }
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("preprocess") {

TEST_CASE("expand_bbox applies the chin-biased margin") {
  const BBox b{100, 100, 200, 200};
  CHECK(expand_bbox(b, 0.30, 1000, 1000) == BBox{70, 80, 260, 260});
  CHECK(expand_bbox(b, 0.0, 1000, 1000) == b);
  CHECK(expand_bbox({0, 0, 100, 100}, 0.30, 110, 110) == BBox{0, 0, 110, 110});
}

TEST_CASE("expand_bbox is monotone in margin before clamping") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const BBox b{500 + static_cast<int>(rng.below(50)),
                 500 + static_cast<int>(rng.below(50)),
                 10 + static_cast<int>(rng.below(90)),
                 10 + static_cast<int>(rng.below(90))};
    const double m1 = rng.uniform(0, 0.5);
    const double m2 = m1 + rng.uniform(0, 0.5);
    const BBox e1 = expand_bbox(b, m1, 4000, 4000);
    const BBox e2 = expand_bbox(b, m2, 4000, 4000);
    CHECK(e2.x <= e1.x);
    CHECK(e2.y <= e1.y);
    CHECK(e2.x + e2.w >= e1.x + e1.w);
    CHECK(e2.y + e2.h >= e1.y + e1.h);
  }
}

TEST_CASE("grayscale uses BT.601 weights") {
  Image img = Image::make(4, 1, 3);
  const std::uint8_t px[4][3] = {
      {255, 255, 255}, {255, 0, 0}, {0, 255, 0}, {0, 0, 255}};
  for (int i = 0; i < 4; ++i) {
    for (int c = 0; c < 3; ++c) img.at(i, 0, c) = px[i][c];
  }
  const Image gray = to_grayscale(img);
  CHECK(gray.channels == 1);
  CHECK(gray.at(0, 0) == 255);
  CHECK(gray.at(1, 0) == 76);
  CHECK(gray.at(2, 0) == 150);
  CHECK(gray.at(3, 0) == 29);
  CHECK_THROWS_AS(to_grayscale(gray), std::runtime_error);
}

TEST_CASE("crop copies regions exactly") {
  Image img = Image::make(8, 6, 1);
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 8; ++x) img.at(x, y) = static_cast<std::uint8_t>(10 * y + x);
  }
  CHECK(crop(img, {0, 0, 8, 6}) == img);
  const Image single = crop(img, {3, 2, 1, 1});
  CHECK(single.at(0, 0) == 23);
  CHECK_THROWS_AS(crop(img, {5, 0, 8, 2}), std::runtime_error);

  // crop of crop == crop with composed offsets
  const Image outer = crop(img, {2, 1, 5, 4});
  const Image inner = crop(outer, {1, 2, 3, 2});
  CHECK(inner == crop(img, {3, 3, 3, 2}));
}

TEST_CASE("resize identity and center averaging") {
  Image img = Image::make(2, 2, 1);
  img.pixels = {0, 0, 100, 100};
  CHECK(resize(img, 2, 2) == img);
  const Image one = resize(img, 1, 1);
  CHECK(one.at(0, 0) == 50);
}

TEST_CASE("resize preserves constant images") {
  const Image img = Image::make(7, 5, 1, 123);
  for (int side : {1, 3, 8, 16}) {
    const Image r = resize(img, side, side);
    for (auto p : r.pixels) CHECK(p == 123);
  }
}

TEST_CASE("resize matches a high-precision oracle within one gray level") {
  Rng rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    Image img = Image::make(2 + static_cast<int>(rng.below(10)),
                            2 + static_cast<int>(rng.below(10)), 1);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
    const int ow = 1 + static_cast<int>(rng.below(20));
    const int oh = 1 + static_cast<int>(rng.below(20));
    const Image fast = resize(img, ow, oh);
    const Image slow = resize_oracle(img, ow, oh);
    for (std::size_t i = 0; i < fast.pixels.size(); ++i) {
      CHECK(std::abs(static_cast<int>(fast.pixels[i]) -
                     static_cast<int>(slow.pixels[i])) <= 1);
    }
  }
}

TEST_CASE("quarter_split cuts quadrants then resizes") {
  SUBCASE("constant image gives constant quarters") {
    const Image img = Image::make(8, 8, 1, 77);
    const auto q = quarter_split(img, 8);
    for (const Image& quarter : q) {
      CHECK(quarter.width == 8);
      for (auto p : quarter.pixels) CHECK(p == 77);
    }
  }
  SUBCASE("quadrant-constant values map to the right quarters") {
    Image img = Image::make(6, 6, 1);
    for (int y = 0; y < 6; ++y) {
      for (int x = 0; x < 6; ++x) {
        img.at(x, y) = static_cast<std::uint8_t>(
            (y < 3 ? (x < 3 ? 10 : 20) : (x < 3 ? 30 : 40)));
      }
    }
    const auto q = quarter_split(img, 4);
    CHECK(q[0].at(0, 0) == 10);
    CHECK(q[1].at(0, 0) == 20);
    CHECK(q[2].at(0, 0) == 30);
    CHECK(q[3].at(0, 0) == 40);
  }
  SUBCASE("out_side equal to half keeps the raw crop") {
    Image img = Image::make(8, 8, 1);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      img.pixels[i] = static_cast<std::uint8_t>(i);
    }
    const auto q = quarter_split(img, 4);
    CHECK(q[0].at(0, 0) == img.at(0, 0));
    CHECK(q[1].at(0, 0) == img.at(4, 0));
  }
  SUBCASE("odd side is rejected") {
    CHECK_THROWS_AS(quarter_split(Image::make(7, 7, 1), 4), std::runtime_error);
    CHECK_THROWS_AS(quarter_split(Image::make(4, 6, 1), 4), std::runtime_error);
  }
}

TEST_CASE("augment_image with zero magnitudes is the identity") {
  Image img = Image::make(16, 16, 1);
  Rng rng(3);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  Rng aug(4);
  CHECK(augment_image(img, aug, 0.0, 0.0) == img);
}

TEST_CASE("augment_image noise magnitude matches the folded normal") {
  const Image img = Image::make(128, 128, 1, 128);
  Rng rng(5);
  double abs_sum = 0;
  std::size_t n = 0;
  for (int rep = 0; rep < 4; ++rep) {
    const Image noisy = augment_image(img, rng, 0.0, 10.0);
    for (std::size_t i = 0; i < noisy.pixels.size(); ++i) {
      abs_sum += std::fabs(static_cast<double>(noisy.pixels[i]) - 128.0);
      ++n;
    }
  }
  const double expected = 10.0 * std::sqrt(2.0 / std::numbers::pi);
  CHECK(std::fabs(abs_sum / n - expected) < 0.1 * expected);
}

TEST_CASE("augment_structured scales and floors") {
  Rng rng(6);
  CHECK(augment_structured(170.0, 70.0, rng, 0.0) ==
        std::pair<double, double>(170.0, 70.0));

  double dev_sum = 0;
  const int n = 5000;
  Rng rng2(7);
  for (int i = 0; i < n; ++i) {
    const auto [h, w] = augment_structured(170.0, 70.0, rng2, 0.02);
    CHECK(h > 0);
    CHECK(w > 0);
    const double rel = h / 170.0 - 1.0;
    dev_sum += rel * rel;
  }
  const double sd = std::sqrt(dev_sum / n);
  CHECK(std::fabs(sd - 0.02) < 0.002);

  Rng rng3(8);
  for (int i = 0; i < 200; ++i) {
    const auto [h, w] = augment_structured(2.0, 1.5, rng3, 5.0);
    CHECK(h >= 1.0);
    CHECK(w >= 1.0);
  }
}

TEST_CASE("norm stats z-score the training set to mean 0 sd 1") {
  Rng rng(9);
  std::vector<SubjectRecord> recs;
  for (int i = 0; i < 64; ++i) {
    SubjectRecord r;
    r.age = 20 + static_cast<int>(rng.below(40));
    r.height_cm = rng.uniform(150, 190);
    r.weight_kg = rng.uniform(45, 95);
    recs.push_back(r);
  }
  const NormStats stats = compute_norm_stats(recs);
  double mean = 0, ss = 0;
  for (const auto& r : recs) mean += (r.height_cm - stats.height_mean) / stats.height_sd;
  mean /= recs.size();
  for (const auto& r : recs) {
    const double z = (r.height_cm - stats.height_mean) / stats.height_sd;
    ss += (z - mean) * (z - mean);
  }
  const double sd = std::sqrt(ss / (recs.size() - 1));
  CHECK(std::fabs(mean) < 1e-9);
  CHECK(std::fabs(sd - 1.0) < 1e-9);
}

TEST_CASE("build_sample runs the full pipeline deterministically") {
  const auto dir = testutil::test_dir("preprocess_build");
  GeneratorConfig gen;
  gen.n_subjects = 3;
  gen.seed = 555;
  gen.image_side = 96;
  const auto recs = generate_synthetic(gen, dir);
  const NormStats stats = compute_norm_stats(recs);

  PreprocessConfig cfg;
  cfg.image_side = 64;
  const PreprocessedSample a = build_sample(recs[0], stats, cfg, dir);
  const PreprocessedSample b = build_sample(recs[0], stats, cfg, dir);
  CHECK(a.full_face == b.full_face);
  CHECK(a.quarters == b.quarters);
  CHECK(a.structured == b.structured);
  CHECK(a.full_face.width == 64);
  CHECK(a.full_face.channels == 1);
  for (const auto& q : a.quarters) {
    CHECK(q.width == 64);
    CHECK(q.height == 64);
  }
  REQUIRE(a.structured.size() == 7);
  CHECK(a.pbf == recs[0].pbf_pct);
  CHECK(a.smm == recs[0].smm_kg);

  // Stats centered on the record itself zero the z-scores.
  NormStats centered;
  centered.height_mean = recs[0].height_cm;
  centered.age_mean = recs[0].age;
  centered.weight_mean = recs[0].weight_kg;
  const PreprocessedSample c = build_sample(recs[0], centered, cfg, dir);
  CHECK(c.structured[0] == 0.0);
  CHECK(c.structured[2] == 0.0);
  CHECK(c.structured[3] == 0.0);
  CHECK(c.structured[1] == gender_code(recs[0].gender));
}

TEST_CASE("generated faces fit a quadratic matching the latent curve") {
  const auto dir = testutil::test_dir("preprocess_chin_match");
  GeneratorConfig gen;
  gen.n_subjects = 5;
  gen.seed = 777;
  gen.image_side = 128;
  std::vector<SubjectLatent> latents;
  const auto recs = generate_synthetic(gen, dir, &latents);
  const NormStats stats = compute_norm_stats(recs);
  PreprocessConfig cfg;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const PreprocessedSample s = build_sample(recs[i], stats, cfg, dir);
    CHECK(std::fabs(s.structured[4] - latents[i].chin_c0) < 1e-6);
    CHECK(std::fabs(s.structured[5]) < 1e-6);
    CHECK(std::fabs(s.structured[6] - latents[i].chin_c2) < 1e-6);
  }
}

}  // TEST_SUITE
