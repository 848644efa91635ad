#include <random>

#include "doctest.h"
#include "spidermesh/augment.hpp"
#include "test_util.hpp"

using namespace spidermesh;

namespace {

bool tensors_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (int i = 0; i < a.numel(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

bool labels_equal(const LabelMap& a, const LabelMap& b) {
  return a.h == b.h && a.w == b.w && a.v == b.v;
}

}  // namespace

TEST_CASE("m_cutout with zero area bounds is the identity") {
  RgbtSample s = testutil::random_sample(16, 16, 3, 1);
  std::mt19937_64 rng(7);
  auto [out, mask] = aug::m_cutout(s, rng, 0.0, 0.0);
  CHECK(tensors_equal(out.rgb, s.rgb));
  CHECK(tensors_equal(out.thermal, s.thermal));
  CHECK(mask.height == 0);
  CHECK(mask.width == 0);
}

TEST_CASE("m_cutout masks rgb only, in bounds, at the requested area") {
  RgbtSample s = testutil::random_sample(64, 64, 3, 2);
  std::mt19937_64 rng(11);
  for (int draw = 0; draw < 100; ++draw) {
    auto [out, m] = aug::m_cutout(s, rng, 0.1, 0.4);
    // Rectangle in bounds.
    REQUIRE(m.top >= 0);
    REQUIRE(m.left >= 0);
    REQUIRE(m.top + m.height <= 64);
    REQUIRE(m.left + m.width <= 64);
    // Area ratio within the configured band.
    const double ratio = m.height * m.width / 4096.0;
    REQUIRE(ratio >= 0.1);
    REQUIRE(ratio <= 0.4);
    // Thermal and label bit-identical.
    REQUIRE(tensors_equal(out.thermal, s.thermal));
    REQUIRE(labels_equal(*out.label, *s.label));
    // Inside the rectangle rgb is black; outside it is untouched.
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        const bool inside =
            y >= m.top && y < m.top + m.height && x >= m.left && x < m.left + m.width;
        for (int c = 0; c < 3; ++c)
          REQUIRE(out.rgb.at3(y, x, c) == (inside ? 0.0 : s.rgb.at3(y, x, c)));
      }
  }
}

TEST_CASE("m_cutout rejects invalid area bounds") {
  RgbtSample s = testutil::random_sample(8, 8, 3, 3);
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(aug::m_cutout(s, rng, -0.1, 0.4), Error);
  CHECK_THROWS_AS(aug::m_cutout(s, rng, 0.5, 0.4), Error);
  CHECK_THROWS_AS(aug::m_cutout(s, rng, 0.1, 1.0), Error);
}

TEST_CASE("cutout blanks both modalities but never the label") {
  RgbtSample s = testutil::random_sample(32, 32, 3, 4);
  std::mt19937_64 rng(13);
  RgbtSample out = aug::cutout(s, rng, 0.2, 0.3);
  CHECK(labels_equal(*out.label, *s.label));
  // Same rectangle hit both planes: find blacked rgb pixels, check thermal.
  int masked = 0;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      if (out.rgb.at3(y, x, 0) == 0.0 && out.rgb.at3(y, x, 1) == 0.0 &&
          out.rgb.at3(y, x, 2) == 0.0 && s.rgb.at3(y, x, 0) != 0.0) {
        REQUIRE(out.thermal.at3(y, x, 0) == 0.0);
        ++masked;
      }
  const double ratio = masked / 1024.0;
  CHECK(ratio >= 0.2);
  CHECK(ratio <= 0.3 + 1e-9);

  std::mt19937_64 rng2(13);
  RgbtSample same = aug::cutout(s, rng2, 0.0, 0.0);
  CHECK(tensors_equal(same.rgb, s.rgb));
  CHECK(tensors_equal(same.thermal, s.thermal));
}

TEST_CASE("hflip mirrors every plane together and is an involution") {
  RgbtSample s = testutil::random_sample(8, 12, 3, 5);
  RgbtSample f = aug::hflip(s);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 12; ++x) {
      for (int c = 0; c < 3; ++c) REQUIRE(f.rgb.at3(y, x, c) == s.rgb.at3(y, 11 - x, c));
      REQUIRE(f.thermal.at3(y, x, 0) == s.thermal.at3(y, 11 - x, 0));
      REQUIRE(f.label->at(y, x) == s.label->at(y, 11 - x));
    }
  RgbtSample ff = aug::hflip(f);
  CHECK(tensors_equal(ff.rgb, s.rgb));
  CHECK(tensors_equal(ff.thermal, s.thermal));
  CHECK(labels_equal(*ff.label, *s.label));
}

TEST_CASE("pipeline with everything disabled is the identity") {
  RgbtSample s = testutil::random_sample(16, 16, 3, 6);
  aug::AugmentConfig cfg;
  cfg.flip_p = 0.0;
  cfg.crop_h = 0;
  cfg.crop_w = 0;
  cfg.mcutout_p = 0.0;
  std::mt19937_64 rng(17);
  RgbtSample out = aug::augment_pipeline(s, rng, cfg);
  CHECK(tensors_equal(out.rgb, s.rgb));
  CHECK(tensors_equal(out.thermal, s.thermal));
  CHECK(labels_equal(*out.label, *s.label));
}

TEST_CASE("pipeline crop applies one shared selection to all planes") {
  // A sample whose label encodes pixel parity lets the permutation be traced:
  // wherever the resized label says "left half", the rgb value must carry the
  // left-half marker too.
  RgbtSample s = testutil::random_sample(16, 16, 2, 7);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      const double mark = (x < 8) ? 0.25 : 0.75;
      s.rgb.at3(y, x, 0) = mark;
      s.thermal.at3(y, x, 0) = mark;
      s.label->at(y, x) = (x < 8) ? 0 : 1;
    }
  aug::AugmentConfig cfg;
  cfg.flip_p = 0.0;
  cfg.crop_h = 8;
  cfg.crop_w = 8;
  cfg.mcutout_p = 0.0;
  std::mt19937_64 rng(19);
  RgbtSample out = aug::augment_pipeline(s, rng, cfg);
  REQUIRE(out.rgb.dim(0) == 16);
  REQUIRE(out.label->h == 16);
  // Away from the half boundary, bilinear and nearest agree on the marker.
  int checked = 0;
  for (int y = 2; y < 14; ++y)
    for (int x = 2; x < 14; ++x) {
      const double v = out.rgb.at3(y, x, 0);
      if (v != 0.25 && v != 0.75) continue;  // interpolation band
      REQUIRE(out.label->at(y, x) == (v == 0.25 ? 0 : 1));
      REQUIRE(out.thermal.at3(y, x, 0) == v);
      ++checked;
    }
  CHECK(checked > 50);
}

TEST_CASE("pipeline flip keeps label aligned with the image permutation") {
  RgbtSample s = testutil::random_sample(8, 8, 3, 8);
  aug::AugmentConfig cfg;
  cfg.flip_p = 1.0;  // force the flip branch
  cfg.crop_h = 0;
  cfg.crop_w = 0;
  cfg.mcutout_p = 0.0;
  std::mt19937_64 rng(23);
  RgbtSample out = aug::augment_pipeline(s, rng, cfg);
  RgbtSample want = aug::hflip(s);
  CHECK(tensors_equal(out.rgb, want.rgb));
  CHECK(labels_equal(*out.label, *want.label));
}

TEST_CASE("pipeline rejects crops larger than the image") {
  RgbtSample s = testutil::random_sample(8, 8, 3, 9);
  aug::AugmentConfig cfg;
  cfg.crop_h = 16;
  cfg.crop_w = 16;
  std::mt19937_64 rng(29);
  CHECK_THROWS_AS(aug::augment_pipeline(s, rng, cfg), Error);
}

TEST_CASE("pipeline is deterministic per seed") {
  RgbtSample s = testutil::random_sample(32, 32, 3, 10);
  aug::AugmentConfig cfg;
  cfg.crop_h = 24;
  cfg.crop_w = 24;
  auto run = [&](uint64_t seed) {
    std::mt19937_64 rng(seed);
    return aug::augment_pipeline(s, rng, cfg);
  };
  RgbtSample a = run(31), b = run(31), c = run(32);
  CHECK(tensors_equal(a.rgb, b.rgb));
  CHECK(tensors_equal(a.thermal, b.thermal));
  CHECK(labels_equal(*a.label, *b.label));
  // A different seed should (overwhelmingly) give a different draw.
  CHECK_FALSE(tensors_equal(a.rgb, c.rgb));
}

TEST_CASE("pipeline handles unlabeled samples") {
  RgbtSample s = testutil::random_sample(16, 16, 3, 11, /*with_label=*/false);
  aug::AugmentConfig cfg;
  cfg.crop_h = 8;
  cfg.crop_w = 8;
  std::mt19937_64 rng(37);
  RgbtSample out = aug::augment_pipeline(s, rng, cfg);
  CHECK_FALSE(out.label.has_value());
  CHECK(out.rgb.dim(0) == 16);
}
