#include <gtest/gtest.h>

#include <cmath>

#include "deepcfl/image_io.hpp"
#include "deepcfl/masking.hpp"
#include "support/testing.hpp"

using namespace deepcfl;

TEST(OutpaintMask, TwentyPercentOf200Columns) {
  const Mask m = make_outpaint_mask(64, 200, 0.2);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 200; ++x) {
      const bool removed = x <= 19 || x >= 180;
      ASSERT_EQ(m.known(y, x), !removed) << "x=" << x;
    }
  int known_cols = 0;
  for (int x = 0; x < 200; ++x) known_cols += m.known(0, x);
  EXPECT_EQ(known_cols, 160);
  EXPECT_EQ(m.kind(), MaskKind::outpaint);
}

TEST(OutpaintMask, SmallImageCountsByEnumeration) {
  const Mask m = make_outpaint_mask(8, 10, 0.2);
  int zero_cols = 0;
  for (int x = 0; x < 10; ++x) {
    bool all_zero = true;
    for (int y = 0; y < 8; ++y) all_zero = all_zero && !m.known(y, x);
    zero_cols += all_zero;
  }
  EXPECT_EQ(zero_cols, 2);
  EXPECT_FALSE(m.known(3, 0));
  EXPECT_FALSE(m.known(3, 9));
  EXPECT_DOUBLE_EQ(m.zero_fraction(), 0.2);
}

TEST(OutpaintMask, DegenerateFractionIsRejected) {
  try {
    make_outpaint_mask(64, 64, 0.01);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("degenerate outpaint mask"), std::string::npos);
  }
}

TEST(RandomMask, ExactCountAndDeterminism) {
  const Mask a = make_random_mask(100, 100, 50, 7);
  EXPECT_EQ(a.zeros(), 5000u);
  EXPECT_EQ(make_random_mask(100, 100, 50, 7), a);
  EXPECT_EQ(a.kind(), MaskKind::random);
}

TEST(RandomMask, NinetyPercentRemoval) {
  const Mask m = make_random_mask(10, 10, 90, 3);
  EXPECT_EQ(m.zeros(), 90u);
  EXPECT_EQ(m.ones(), 10u);
}

TEST(RandomMask, DifferentSeedsDiffer) {
  EXPECT_FALSE(make_random_mask(32, 32, 50, 1) == make_random_mask(32, 32, 50, 2));
}

TEST(RandomMask, ZeroCountIsExactForRandomDraws) {
  Rng rng(99);
  for (int i = 0; i < 40; ++i) {
    const int h = 1 + static_cast<int>(rng.below(60)), w = 1 + static_cast<int>(rng.below(60));
    const double r = rng.uniform(0.5, 99.5);
    const Mask m = make_random_mask(h, w, r, rng.next());
    EXPECT_EQ(m.zeros(), static_cast<std::size_t>(std::llround(h * w * r / 100.0)));
  }
}

TEST(RandomMask, RejectsOutOfRangePercent) {
  EXPECT_THROW(make_random_mask(10, 10, 0, 1), ConfigError);
  EXPECT_THROW(make_random_mask(10, 10, 100, 1), ConfigError);
}

class LoadMaskTest : public ::testing::Test {
protected:
  void SetUp() override { dir_ = support::temp_dir("masks"); }
  std::string write(const std::string& name, const Tensor<float>& t) {
    const auto p = (dir_ / name).string();
    write_png(p, t);
    return p;
  }
  std::filesystem::path dir_;
};

TEST_F(LoadMaskTest, AllWhiteIsAllKnown) {
  const auto p = write("white.png", Tensor<float>(1, 40, 50, 1.0f));
  const Mask m = load_mask(p, {40, 50});
  EXPECT_EQ(m.zeros(), 0u);
}

TEST_F(LoadMaskTest, AllBlackWarns) {
  const auto p = write("black.png", Tensor<float>(1, 40, 50, 0.0f));
  std::vector<std::string> warnings;
  const Mask m = load_mask(p, {40, 50}, MaskKind::file, &warnings);
  EXPECT_EQ(m.ones(), 0u);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("no known pixels"), std::string::npos);
}

TEST_F(LoadMaskTest, DiscPixelCountMatchesIndependentRasterization) {
  Tensor<float> t(1, 64, 64, 1.0f);
  // Anti-aliased disc of radius 10: coverage-weighted intensity on the rim.
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      int inside = 0;
      for (int sy = 0; sy < 4; ++sy)
        for (int sx = 0; sx < 4; ++sx) {
          const double px = x + (sx + 0.5) / 4.0, py = y + (sy + 0.5) / 4.0;
          inside += (px - 32.0) * (px - 32.0) + (py - 32.0) * (py - 32.0) <= 100.0;
        }
      t(0, y, x) = 1.0f - inside / 16.0f;
    }
  const auto p = write("disc.png", t);
  // Oracle: pixels whose quantized intensity is below 0.5, counted directly.
  std::size_t expected = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) expected += to_byte(t(0, y, x)) / 255.0f < 0.5f;
  const Mask m = load_mask(p, {64, 64});
  EXPECT_EQ(m.zeros(), expected);
  EXPECT_GT(expected, 300u);  // ~ pi * 10^2
  EXPECT_LT(expected, 330u);
}

TEST_F(LoadMaskTest, DimensionMismatchAndMissingFile) {
  const auto p = write("white.png", Tensor<float>(1, 40, 50, 1.0f));
  EXPECT_THROW(load_mask(p, {50, 40}), ShapeError);
  EXPECT_THROW(load_mask((dir_ / "nope.png").string(), {40, 50}), IoError);
}

TEST_F(LoadMaskTest, ColourRasterIsBinarized) {
  Tensor<float> t(3, 40, 40, 1.0f);
  for (int c = 0; c < 3; ++c) t(c, 5, 5) = 0.0f;
  const auto p = write("rgb.png", t);
  const Mask m = load_mask(p, {40, 40});
  EXPECT_EQ(m.zeros(), 1u);
  EXPECT_FALSE(m.known(5, 5));
}

TEST(Corrupt, IdentityAndAnnihilation) {
  const Image img = support::noise_image(40, 40, 1);
  EXPECT_EQ(corrupt(img, Mask(40, 40, 1)), img);
  const Image zero = corrupt(img, Mask(40, 40, 0));
  for (float v : zero.tensor().values()) EXPECT_EQ(v, 0.0f);
}

TEST(Corrupt, ConstantImageWithOutpaintMask) {
  // Image needs >= 32 px; the mask logic is checked on a 32 x 10 strip per 10-column period.
  const Image img(32, 40, 0.5f);
  Mask m(32, 40, 1);
  const Mask strip = make_outpaint_mask(32, 10, 0.2);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 40; ++x) m.set(y, x, strip.known(y, x % 10));
  const Image x = corrupt(img, m);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 32; ++y)
      for (int col = 0; col < 40; ++col) {
        const int k = col % 10;
        EXPECT_EQ(x(c, y, col), (k == 0 || k == 9) ? 0.0f : 0.5f);
      }
}

TEST(Corrupt, IsIdempotentAndLeavesInputUntouched) {
  const Image img = support::noise_image(48, 48, 2);
  const Image copy = img;
  const Mask m = make_random_mask(48, 48, 30, 4);
  const Image once = corrupt(img, m);
  EXPECT_EQ(corrupt(once, m), once);
  EXPECT_EQ(img, copy);
  EXPECT_THROW(corrupt(img, Mask(40, 48)), ShapeError);
}

TEST(Composite, ExtremesAndCheckerboard) {
  const Image src = support::noise_image(32, 32, 3), out = support::noise_image(32, 32, 4);
  EXPECT_EQ(composite(out, src, Mask(32, 32, 1)), src);
  EXPECT_EQ(composite(out, src, Mask(32, 32, 0)), out);

  Mask checker(32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) checker.set(y, x, (x + y) % 2 == 0);
  const Image c = composite(Image(32, 32, 0.0f), Image(32, 32, 1.0f), checker);
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) EXPECT_EQ(c(ch, y, x), checker.known(y, x) ? 1.0f : 0.0f);
}

TEST(Composite, KnownPixelsAreNeverAltered) {
  Rng rng(8);
  for (int i = 0; i < 10; ++i) {
    const Image original = support::noise_image(40, 36, rng.next());
    const Mask m = make_random_mask(40, 36, rng.uniform(1, 99), rng.next());
    const Image x = corrupt(original, m);
    const Image y = support::noise_image(40, 36, rng.next());
    EXPECT_EQ(corrupt(composite(y, x, m), m), x);
  }
}

TEST(MaskAnd, ComposesRandomAndFileMasks) {
  const Mask a = make_random_mask(40, 40, 50, 1);
  Mask b(40, 40, 1);
  for (int x = 0; x < 40; ++x) b.set(10, x, false);
  const Mask c = a & b;
  EXPECT_GE(c.zeros(), a.zeros());
  for (int x = 0; x < 40; ++x) EXPECT_FALSE(c.known(10, x));
}
