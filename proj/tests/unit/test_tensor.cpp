#include <gtest/gtest.h>

#include <random>

#include "eclad/tensor.hpp"
#include "test_util.hpp"

using namespace eclad;

namespace {

Tensor3 grid2x2() { return Tensor3(2, 2, 1, std::vector<float>{1, 2, 3, 4}); }

// Independent half-pixel bilinear evaluation of one output cell.
double bilinear_oracle(const Tensor3& src, std::size_t r, std::size_t c, std::size_t ch, std::size_t th,
                       std::size_t tw) {
  auto coord = [](std::size_t d, std::size_t n_src, std::size_t n_dst) {
    double s = (d + 0.5) * static_cast<double>(n_src) / static_cast<double>(n_dst) - 0.5;
    if (s < 0) s = 0;
    if (s > n_src - 1.0) s = n_src - 1.0;
    return s;
  };
  const double sy = coord(r, src.height(), th);
  const double sx = coord(c, src.width(), tw);
  const std::size_t y0 = static_cast<std::size_t>(sy), x0 = static_cast<std::size_t>(sx);
  const std::size_t y1 = std::min(y0 + 1, src.height() - 1), x1 = std::min(x0 + 1, src.width() - 1);
  const double fy = sy - y0, fx = sx - x0;
  return (1 - fy) * ((1 - fx) * src.at(y0, x0, ch) + fx * src.at(y0, x1, ch)) +
         fy * ((1 - fx) * src.at(y1, x0, ch) + fx * src.at(y1, x1, ch));
}

}  // namespace

TEST(Upscale, IdentityForEveryMode) {
  std::mt19937_64 gen(1);
  const Tensor3 t = testutil::random_tensor(gen, 5, 7, 3);
  for (auto mode : {UpscaleMode::nearest, UpscaleMode::bilinear, UpscaleMode::bicubic}) {
    const Tensor3 u = upscale(t, 5, 7, mode);
    EXPECT_EQ(u.data(), t.data()) << to_string(mode);
  }
}

TEST(Upscale, TwoByTwoToFourByFourBilinear) {
  const Tensor3 u = upscale(grid2x2(), 4, 4, UpscaleMode::bilinear);
  EXPECT_FLOAT_EQ(u.at(0, 0, 0), 1.0f);
  EXPECT_FLOAT_EQ(u.at(1, 1, 0), 1 * 0.5625 + 2 * 0.1875 + 3 * 0.1875 + 4 * 0.0625);
  EXPECT_FLOAT_EQ(u.at(3, 3, 0), 4.0f);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_NEAR(u.at(r, c, 0), bilinear_oracle(grid2x2(), r, c, 0, 4, 4), 1e-6) << r << "," << c;
    }
  }
}

TEST(Upscale, BilinearMatchesOracleOnRandomInputs) {
  std::mt19937_64 gen(2);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t h = 1 + gen() % 6, w = 1 + gen() % 6, th = h + gen() % 20, tw = w + gen() % 20;
    const Tensor3 t = testutil::random_tensor(gen, h, w, 2);
    const Tensor3 u = upscale(t, th, tw, UpscaleMode::bilinear);
    for (std::size_t r = 0; r < th; ++r) {
      for (std::size_t c = 0; c < tw; ++c) {
        for (std::size_t ch = 0; ch < 2; ++ch) ASSERT_NEAR(u.at(r, c, ch), bilinear_oracle(t, r, c, ch, th, tw), 1e-5);
      }
    }
  }
}

TEST(Upscale, SingleSampleGivesConstantField) {
  const Tensor3 t(1, 1, 3, std::vector<float>{0.5f, -2.0f, 7.0f});
  for (auto mode : {UpscaleMode::nearest, UpscaleMode::bilinear, UpscaleMode::bicubic}) {
    const Tensor3 u = upscale(t, 6, 9, mode);
    for (std::size_t r = 0; r < 6; ++r) {
      for (std::size_t c = 0; c < 9; ++c) {
        for (std::size_t ch = 0; ch < 3; ++ch) EXPECT_FLOAT_EQ(u.at(r, c, ch), t.at(0, 0, ch));
      }
    }
  }
}

TEST(Upscale, BilinearStaysWithinSourceRange) {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor3 t = testutil::random_tensor(gen, 3, 4, 2, -5, 5);
    const Tensor3 u = upscale(t, 17, 13, UpscaleMode::bilinear);
    for (std::size_t ch = 0; ch < 2; ++ch) {
      float lo = 1e9f, hi = -1e9f;
      for (std::size_t p = 0; p < 12; ++p) lo = std::min(lo, t.pixel(p)[ch]), hi = std::max(hi, t.pixel(p)[ch]);
      for (std::size_t p = 0; p < 17 * 13; ++p) {
        EXPECT_GE(u.pixel(p)[ch], lo - 1e-6f);
        EXPECT_LE(u.pixel(p)[ch], hi + 1e-6f);
      }
    }
  }
}

TEST(Upscale, NearestReplicatesBlocks) {
  const Tensor3 u = upscale(grid2x2(), 4, 4, UpscaleMode::nearest);
  EXPECT_FLOAT_EQ(u.at(0, 1, 0), 1.0f);
  EXPECT_FLOAT_EQ(u.at(1, 2, 0), 2.0f);
  EXPECT_FLOAT_EQ(u.at(2, 1, 0), 3.0f);
  EXPECT_FLOAT_EQ(u.at(3, 3, 0), 4.0f);
}

TEST(Upscale, BicubicReproducesLinearRampsInTheInterior) {
  // Keys a = -0.5 reproduces polynomials up to degree 2 away from the clamped border.
  Tensor3 t(1, 8, 1);
  for (std::size_t c = 0; c < 8; ++c) t.at(0, c, 0) = static_cast<float>(c);
  const Tensor3 u = upscale(t, 1, 32, UpscaleMode::bicubic);
  for (std::size_t c = 8; c < 24; ++c) EXPECT_NEAR(u.at(0, c, 0), (c + 0.5) / 4.0 - 0.5, 1e-5);
}

TEST(Upscale, RejectsEmptyInputs) {
  EXPECT_THROW(upscale(Tensor3(), 2, 2, UpscaleMode::bilinear), InvalidArgument);
  EXPECT_THROW(upscale(grid2x2(), 0, 2, UpscaleMode::bilinear), InvalidArgument);
}

TEST(Concat, Layout) {
  std::mt19937_64 gen(4);
  const Tensor3 a = testutil::random_tensor(gen, 3, 2, 2);
  const Tensor3 b = testutil::random_tensor(gen, 3, 2, 3);
  EXPECT_EQ(concat_channels(std::vector<Tensor3>{a}).data(), a.data());
  const Tensor3 ab = concat_channels(std::vector<Tensor3>{a, b});
  EXPECT_EQ(ab.channels(), 5u);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 2; ++c) {
      for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(ab.at(r, c, k), a.at(r, c, k));
      for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(ab.at(r, c, 2 + k), b.at(r, c, k));
    }
  }
  EXPECT_THROW(concat_channels(std::vector<Tensor3>{}), InvalidArgument);
  EXPECT_THROW(concat_channels(std::vector<Tensor3>{a, Tensor3(2, 2, 1)}), InvalidArgument);
}

TEST(Edt, Examples) {
  const Field2 full = edt(Mask2(4, 6, true));
  for (double v : full.values()) EXPECT_EQ(v, 0.0);

  Mask2 one(5, 5);
  one.set(0, 0, true);
  EXPECT_DOUBLE_EQ(edt(one)(3, 4), 5.0);

  const Field2 empty = edt(Mask2(3, 4));
  for (double v : empty.values()) EXPECT_DOUBLE_EQ(v, 5.0);
}

TEST(Edt, MatchesBruteForceOnRandomMasks) {
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t h = 1 + gen() % 64, w = 1 + gen() % 64;
    const double density = std::array<double, 5>{0.0, 0.002, 0.05, 0.4, 1.0}[trial % 5];
    const Mask2 m = testutil::random_mask(gen, h, w, density);
    const Field2 d = edt(m);
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) ASSERT_NEAR(d(r, c), testutil::brute_distance(m, r, c), 1e-6);
    }
  }
}

TEST(Edt, ZeroExactlyOnSeeds) {
  std::mt19937_64 gen(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Mask2 m = testutil::random_mask(gen, 20, 30, 0.1);
    if (!m.any()) continue;
    const Field2 d = edt(m);
    for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(d[i] == 0.0, m[i]);
  }
}
