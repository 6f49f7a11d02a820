#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "tcr/post/postprocess.hpp"
#include "tcr/targets/augment.hpp"
#include "tcr/targets/targets.hpp"

namespace tcr::targets {
namespace {

const Resampling kIdentity{};

TEST(PointTarget, SinglePointPeaksAtItsPixel) {
  const PointAnnotation p{32, 20, CellClass::normal};
  auto map = make_point_target(std::span(&p, 1), 64, 40, kIdentity, PeakShape{}, PointMode::all);
  EXPECT_EQ(map.at(32, 20), 1.0f);
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x) {
      if (x == 32 && y == 20) continue;
      ASSERT_LT(map.at(x, y), 1.0f) << x << "," << y;
    }
}

TEST(PointTarget, EmptyListGivesZeros) {
  auto map = make_point_target({}, 16, 16, kIdentity, PeakShape{}, PointMode::all);
  for (float v : map.values) EXPECT_EQ(v, 0.0f);
}

TEST(PointTarget, TwoPointsTwelvePixelsApartGiveTwoPeaks) {
  const std::vector<PointAnnotation> pts = {{20, 30, CellClass::normal}, {32, 30, CellClass::tumor}};
  auto map = make_point_target(pts, 60, 60, kIdentity, PeakShape{}, PointMode::all);
  const auto peaks = post::detect_peaks(map, 0.5);
  ASSERT_EQ(peaks.size(), 2u);
  EXPECT_EQ(peaks[0], (post::Peak{20, 30, 1.0f}));
  EXPECT_EQ(peaks[1], (post::Peak{32, 30, 1.0f}));
}

TEST(PointTarget, PeakSetEqualsPointSetWhenSeparated) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<PointAnnotation> pts;
    std::uniform_int_distribution<int> u(0, 127);
    while (pts.size() < 40) {
      const PointAnnotation p{u(rng), u(rng), rng() % 2 ? CellClass::tumor : CellClass::normal};
      const bool far = std::all_of(pts.begin(), pts.end(), [&](const auto& q) {
        return std::hypot(double(p.x - q.x), double(p.y - q.y)) > 6.5;  // > 3 sigma
      });
      if (far) pts.push_back(p);
    }
    auto all = make_point_target(pts, 128, 128, kIdentity, PeakShape{}, PointMode::all);
    auto tumor = make_point_target(pts, 128, 128, kIdentity, PeakShape{}, PointMode::tumor_only);
    std::set<std::pair<int, int>> expected, found;
    for (const auto& p : pts) expected.insert({int(p.x), int(p.y)});
    for (const auto& pk : post::detect_peaks(all, 0.5)) found.insert({pk.x, pk.y});
    EXPECT_EQ(found, expected);
    for (std::size_t i = 0; i < all.values.size(); ++i) {
      ASSERT_GE(all.values[i], 0.0f);
      ASSERT_LE(all.values[i], 1.0f);
      ASSERT_LE(tumor.values[i], all.values[i]);
    }
  }
}

TEST(PointTarget, ScalesWithMagnification) {
  const auto s20 = PeakShape::at_magnification(20);
  EXPECT_DOUBLE_EQ(s20.disk_radius, 2.0);
  EXPECT_DOUBLE_EQ(s20.sigma, 1.0);
  // Level-0 point (101, 41) lands on 20X pixel (50, 20).
  const PointAnnotation p{101, 41, CellClass::tumor};
  const Resampling half{0, 0, 0.5};
  auto map = make_point_target(std::span(&p, 1), 64, 32, half, s20, PointMode::tumor_only);
  EXPECT_EQ(map.at(50, 20), 1.0f);
}

TEST(PointTarget, OutOfBoundsPointsSkippedAndCounted) {
  const std::vector<PointAnnotation> pts = {{-3, 4, CellClass::normal}, {5, 5, CellClass::normal},
                                            {40, 2, CellClass::normal}};
  TargetStats stats;
  auto map = make_point_target(pts, 16, 16, kIdentity, PeakShape{}, PointMode::all, &stats);
  EXPECT_EQ(stats.skipped, 2);
  EXPECT_EQ(map.at(5, 5), 1.0f);
}

TEST(AreaTarget, FullFrameRectangle) {
  const PolygonAnnotation rect{{{0, 0}, {40, 0}, {40, 30}, {0, 30}}};
  auto map = make_area_target(std::span(&rect, 1), 40, 30, kIdentity);
  for (float v : map.values) EXPECT_EQ(v, 1.0f);
}

TEST(AreaTarget, NoPolygonsGivesZeros) {
  auto map = make_area_target({}, 20, 20, kIdentity);
  for (float v : map.values) EXPECT_EQ(v, 0.0f);
}

TEST(AreaTarget, FiftySquareHasExactly2500Ones) {
  const PolygonAnnotation sq{{{25, 25}, {75, 25}, {75, 75}, {25, 75}}};
  auto map = make_area_target(std::span(&sq, 1), 100, 100, kIdentity);
  int ones = 0;
  for (float v : map.values) ones += v == 1.0f;
  EXPECT_EQ(ones, 2500);
}

TEST(AreaTarget, MatchesPixelCenterOracleOnRandomPolygons) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-10.0, 90.0);
  for (int trial = 0; trial < 30; ++trial) {
    PolygonAnnotation poly;
    for (int i = 0; i < 7; ++i) poly.vertices.emplace_back(u(rng), u(rng));  // may self-intersect
    auto map = make_area_target(std::span(&poly, 1), 80, 80, kIdentity);
    for (int y = 0; y < 80; ++y)
      for (int x = 0; x < 80; ++x) {
        const float expect = polygon_contains(poly, x + 0.5, y + 0.5) ? 1.0f : 0.0f;
        ASSERT_EQ(map.at(x, y), expect) << trial << " " << x << "," << y;
      }
  }
}

TEST(AreaTarget, DegeneratePolygonSkipped) {
  const std::vector<PolygonAnnotation> polys = {{{{0, 0}, {10, 10}}},
                                                {{{0, 0}, {4, 0}, {4, 4}, {0, 4}}}};
  TargetStats stats;
  auto map = make_area_target(polys, 8, 8, kIdentity, &stats);
  EXPECT_EQ(stats.skipped, 1);
  EXPECT_EQ(map.at(1, 1), 1.0f);
  EXPECT_EQ(map.at(6, 6), 0.0f);
}

RgbImage random_image(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  RgbImage img(w, h);
  for (auto& v : img.pixels) v = static_cast<std::uint8_t>(rng() & 0xff);
  return img;
}

int max_abs_diff(const RgbImage& a, const RgbImage& b) {
  int worst = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) worst = std::max(worst, std::abs(a.pixels[i] - b.pixels[i]));
  return worst;
}

TEST(StainBasis, InverseAndResidualAxis) {
  const auto b = StainBasis::he();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += b.matrix()[i][k] * b.inverse()[k][j];
      EXPECT_NEAR(acc, i == j ? 1.0 : 0.0, 1e-12);
    }
  const auto h = b.column(0), e = b.column(1), r = b.column(2);
  EXPECT_NEAR(r[0] * h[0] + r[1] * h[1] + r[2] * h[2], 0.0, 1e-12);
  EXPECT_NEAR(r[0] * e[0] + r[1] * e[1] + r[2] * e[2], 0.0, 1e-12);
  EXPECT_NEAR(h[0] * h[0] + h[1] * h[1] + h[2] * h[2], 1.0, 1e-12);
}

TEST(StainBasis, ParallelVectorsRejected) {
  EXPECT_THROW(StainBasis({1, 2, 3}, {2, 4, 6}), std::invalid_argument);
}

TEST(StainShift, WhiteIsUnchanged) {
  RgbImage white(4, 4, 255);
  EXPECT_EQ(stain_shift(white, 1.15, 0.85, StainBasis::he()), white);
  EXPECT_EQ(stain_shift(white, 0.85, 1.15, StainBasis::he()), white);
}

TEST(StainShift, UnitFactorsRoundTrip) {
  const auto img = random_image(64, 64, 1);
  EXPECT_LE(max_abs_diff(stain_shift(img, 1.0, 1.0, StainBasis::he()), img), 1);
}

TEST(StainShift, MidGrayMatchesDirectFormula) {
  // Independent evaluation: solve OD = c_h*h + c_e*e + c_r*r by Cramer's rule.
  auto unit = [](std::array<double, 3> v) {
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    return std::array<double, 3>{v[0] / n, v[1] / n, v[2] / n};
  };
  const auto h = unit({0.650, 0.704, 0.286});
  const auto e = unit({0.072, 0.990, 0.105});
  const auto r = unit({h[1] * e[2] - h[2] * e[1], h[2] * e[0] - h[0] * e[2], h[0] * e[1] - h[1] * e[0]});
  auto det3 = [](std::array<double, 3> a, std::array<double, 3> b, std::array<double, 3> c) {
    return a[0] * (b[1] * c[2] - b[2] * c[1]) - b[0] * (a[1] * c[2] - a[2] * c[1]) +
           c[0] * (a[1] * b[2] - a[2] * b[1]);
  };
  const double od = -std::log10(128.0 / 255.0);
  const std::array<double, 3> v = {od, od, od};
  const double d = det3(h, e, r);
  const double ch = det3(v, e, r) / d, ce = det3(h, v, r) / d, cr = det3(h, e, v) / d;
  RgbImage gray(1, 1, 128);
  const auto out = stain_shift(gray, 1.1, 1.0, StainBasis::he());
  for (int c = 0; c < 3; ++c) {
    const double od2 = 1.1 * ch * h[c] + ce * e[c] + cr * r[c];
    const double expect = std::clamp(255.0 * std::pow(10.0, -od2), 0.0, 255.0);
    EXPECT_EQ(out.pixels[c], static_cast<int>(std::lround(expect)));
  }
  EXPECT_LT(out.pixels[0], 128);  // more hematoxylin darkens
}

TEST(HslShift, ZeroShiftIsIdentityWithinOne) {
  const auto img = random_image(64, 64, 2);
  EXPECT_LE(max_abs_diff(hsl_shift(img, 0, 0, 0), img), 1);
  EXPECT_LE(max_abs_diff(hsl_shift(img, 1.0, 0, 0), img), 1);
}

TEST(HslShift, LightnessClampsToWhite) {
  const auto img = random_image(8, 8, 3);
  const auto out = hsl_shift(img, 0, 0, 1.0);
  for (auto v : out.pixels) EXPECT_EQ(v, 255);
}

TEST(Blur, ImpulseReproducesSampledGaussian) {
  DensityMap impulse(9, 9);
  impulse.at(4, 4) = 1.0f;
  const auto out = gaussian_blur(impulse, 0.5);
  std::vector<double> k(5);
  double sum = 0.0;
  for (int i = -2; i <= 2; ++i) sum += k[i + 2] = std::exp(-(i * i) / (2 * 0.25));
  for (auto& v : k) v /= sum;
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 9; ++x) {
      const int dx = x - 4, dy = y - 4;
      const double expect = std::abs(dx) <= 2 && std::abs(dy) <= 2 ? k[dx + 2] * k[dy + 2] : 0.0;
      EXPECT_NEAR(out.at(x, y), expect, 1e-7);
    }
}

TEST(Blur, PreservesShapeAndConstants) {
  RgbImage flat(13, 7, 77);
  EXPECT_EQ(gaussian_blur(flat, 0.8), flat);
  EXPECT_EQ(unsharp_mask(flat, 0.5), flat);
}

TEST(Dihedral, InverseRestoresImageExactly) {
  const auto img = random_image(11, 7, 4);
  DensityMap map(11, 7);
  for (std::size_t i = 0; i < map.values.size(); ++i) map.values[i] = static_cast<float>(i);
  for (int k = 0; k < 8; ++k) {
    const auto t = dihedral(img, k);
    EXPECT_EQ(t.width, k % 2 ? 7 : 11);
    EXPECT_EQ(dihedral(t, dihedral_inverse(k)), img) << k;
    EXPECT_EQ(dihedral(dihedral(map, k), dihedral_inverse(k)), map) << k;
  }
}

TEST(Dihedral, AllEightTransformsDistinct) {
  const auto img = random_image(6, 6, 5);
  std::set<std::vector<std::uint8_t>> seen;
  for (int k = 0; k < 8; ++k) seen.insert(dihedral(img, k).pixels);
  EXPECT_EQ(seen.size(), 8u);
}

TEST(Dihedral, PointsFollowTheRaster) {
  const std::vector<PointAnnotation> pts = {{2, 3, CellClass::tumor}, {9, 0, CellClass::normal},
                                            {0, 6, CellClass::normal}};
  auto map = make_point_target(pts, 12, 8, kIdentity, PeakShape{1, 0.5}, PointMode::all);
  for (int k = 0; k < 8; ++k) {
    const auto t = dihedral(map, k);
    std::set<std::pair<int, int>> peaks, moved;
    for (const auto& p : post::detect_peaks(t, 0.5)) peaks.insert({p.x, p.y});
    for (const auto& p : pts) {
      const auto [x, y] = dihedral_point(p.x, p.y, 12, 8, k);
      moved.insert({int(x), int(y)});
    }
    EXPECT_EQ(peaks, moved) << k;
  }
}

TEST(Augment, SampledParamsAreSeededAndInRange) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto a = sample_augment(seed);
    const auto b = sample_augment(seed);
    EXPECT_EQ(a.h_factor, b.h_factor);
    EXPECT_EQ(a.dihedral, b.dihedral);
    EXPECT_GE(a.h_factor, 0.85);
    EXPECT_LE(a.e_factor, 1.15);
    EXPECT_LE(std::abs(a.d_hue), 0.02);
    EXPECT_LE(std::abs(a.d_sat), 0.1);
    EXPECT_LE(std::abs(a.d_lum), 0.1);
    EXPECT_TRUE(a.blur_sigma == 0.0 || a.sharpen == 0.0);
    EXPECT_LE(a.blur_sigma, 0.8);
    EXPECT_LE(a.sharpen, 0.5);
  }
}

TEST(Augment, IdentityParamsChangeLittle) {
  const auto img = random_image(32, 32, 6);
  EXPECT_LE(max_abs_diff(apply_color(img, AugmentParams{}, StainBasis::he()), img), 2);
}

}  // namespace
}  // namespace tcr::targets
