#include "tcr/targets/augment.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace tcr::targets {
namespace {

Vec3 normalized(const Vec3& v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  if (!(n > 0.0)) throw std::invalid_argument("stain vector has zero length");
  return {v[0] / n, v[1] / n, v[2] / n};
}

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace

StainBasis::StainBasis(const Vec3& hematoxylin, const Vec3& eosin) {
  const Vec3 h = normalized(hematoxylin);
  const Vec3 e = normalized(eosin);
  const Vec3 c = cross(h, e);
  const double cn = std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]);
  if (cn < 1e-6) throw std::invalid_argument("stain vectors are parallel; basis not invertible");
  const Vec3 r = {c[0] / cn, c[1] / cn, c[2] / cn};
  for (int i = 0; i < 3; ++i) m_[i] = {h[i], e[i], r[i]};
  const auto& m = m_;
  const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                     m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                     m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  if (std::abs(det) < 1e-9) throw std::invalid_argument("stain basis is not invertible");
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      // Cofactor transpose.
      const int r0 = (j + 1) % 3, r1 = (j + 2) % 3, c0 = (i + 1) % 3, c1 = (i + 2) % 3;
      inv_[i][j] = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det;
    }
}

StainBasis StainBasis::he() { return StainBasis({0.650, 0.704, 0.286}, {0.072, 0.990, 0.105}); }

RgbImage stain_shift(const RgbImage& image, double h_factor, double e_factor,
                     const StainBasis& basis) {
  std::array<double, 256> od{};
  for (int i = 0; i < 256; ++i) od[i] = -std::log10(std::max(i, 1) / kWhite);
  const Mat3& m = basis.matrix();
  const Mat3& inv = basis.inverse();
  // Combined linear map in OD space: M * diag(h, e, 1) * M^-1.
  Mat3 t{};
  const double scale[3] = {h_factor, e_factor, 1.0};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += m[i][k] * scale[k] * inv[k][j];
      t[i][j] = acc;
    }
  RgbImage out(image.width, image.height);
  const std::size_t n = image.pixels.size() / 3;
  for (std::size_t p = 0; p < n; ++p) {
    const std::uint8_t* src = image.pixels.data() + 3 * p;
    const double o[3] = {od[src[0]], od[src[1]], od[src[2]]};
    for (int c = 0; c < 3; ++c) {
      const double v = t[c][0] * o[0] + t[c][1] * o[1] + t[c][2] * o[2];
      out.pixels[3 * p + c] = to_byte(kWhite * std::pow(10.0, -v));
    }
  }
  return out;
}

namespace {

void rgb_to_hsl(double r, double g, double b, double& h, double& s, double& l) {
  const double hi = std::max({r, g, b});
  const double lo = std::min({r, g, b});
  l = (hi + lo) / 2.0;
  if (hi == lo) {
    h = 0.0;
    s = 0.0;
    return;
  }
  const double d = hi - lo;
  s = l <= 0.5 ? d / (hi + lo) : d / (2.0 - hi - lo);
  const double rc = (hi - r) / d, gc = (hi - g) / d, bc = (hi - b) / d;
  if (r == hi) {
    h = bc - gc;
  } else if (g == hi) {
    h = 2.0 + rc - bc;
  } else {
    h = 4.0 + gc - rc;
  }
  h = h / 6.0 - std::floor(h / 6.0);
}

double hue_channel(double m1, double m2, double hue) {
  hue -= std::floor(hue);
  if (hue < 1.0 / 6.0) return m1 + (m2 - m1) * hue * 6.0;
  if (hue < 0.5) return m2;
  if (hue < 2.0 / 3.0) return m1 + (m2 - m1) * (2.0 / 3.0 - hue) * 6.0;
  return m1;
}

void hsl_to_rgb(double h, double s, double l, double& r, double& g, double& b) {
  if (s == 0.0) {
    r = g = b = l;
    return;
  }
  const double m2 = l <= 0.5 ? l * (1.0 + s) : l + s - l * s;
  const double m1 = 2.0 * l - m2;
  r = hue_channel(m1, m2, h + 1.0 / 3.0);
  g = hue_channel(m1, m2, h);
  b = hue_channel(m1, m2, h - 1.0 / 3.0);
}

}  // namespace

RgbImage hsl_shift(const RgbImage& image, double d_hue, double d_sat, double d_lum) {
  RgbImage out(image.width, image.height);
  const std::size_t n = image.pixels.size() / 3;
  for (std::size_t p = 0; p < n; ++p) {
    const std::uint8_t* src = image.pixels.data() + 3 * p;
    double h, s, l;
    rgb_to_hsl(src[0] / 255.0, src[1] / 255.0, src[2] / 255.0, h, s, l);
    h += d_hue;
    h -= std::floor(h);
    s = std::clamp(s + d_sat, 0.0, 1.0);
    l = std::clamp(l + d_lum, 0.0, 1.0);
    double r, g, b;
    hsl_to_rgb(h, s, l, r, g, b);
    out.pixels[3 * p] = to_byte(r * 255.0);
    out.pixels[3 * p + 1] = to_byte(g * 255.0);
    out.pixels[3 * p + 2] = to_byte(b * 255.0);
  }
  return out;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) return {1.0};
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-(i * i) / (2.0 * sigma * sigma));
  for (auto& v : k) v /= sum;
  return k;
}

namespace {

// Separable blur of one float plane with replicated borders.
void blur_plane(std::vector<double>& plane, int w, int h, const std::vector<double>& k) {
  const int r = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(plane.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * plane[y * w + std::clamp(x + i, 0, w - 1)];
      tmp[y * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp[std::clamp(y + i, 0, h - 1) * w + x];
      plane[y * w + x] = acc;
    }
}

std::vector<double> channel(const RgbImage& image, int c) {
  std::vector<double> plane(static_cast<std::size_t>(image.width) * image.height);
  for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = image.pixels[3 * i + c];
  return plane;
}

}  // namespace

DensityMap gaussian_blur(const DensityMap& map, double sigma) {
  if (!(sigma > 0.0) || map.values.empty()) return map;
  std::vector<double> plane(map.values.begin(), map.values.end());
  blur_plane(plane, map.width, map.height, gaussian_kernel(sigma));
  DensityMap out(map.width, map.height);
  for (std::size_t i = 0; i < plane.size(); ++i) out.values[i] = static_cast<float>(plane[i]);
  return out;
}

RgbImage gaussian_blur(const RgbImage& image, double sigma) {
  if (!(sigma > 0.0) || image.pixels.empty()) return image;
  const auto k = gaussian_kernel(sigma);
  RgbImage out(image.width, image.height);
  for (int c = 0; c < 3; ++c) {
    auto plane = channel(image, c);
    blur_plane(plane, image.width, image.height, k);
    for (std::size_t i = 0; i < plane.size(); ++i) out.pixels[3 * i + c] = to_byte(plane[i]);
  }
  return out;
}

RgbImage unsharp_mask(const RgbImage& image, double amount, double sigma) {
  if (amount == 0.0 || image.pixels.empty()) return image;
  const auto k = gaussian_kernel(sigma);
  RgbImage out(image.width, image.height);
  for (int c = 0; c < 3; ++c) {
    const auto orig = channel(image, c);
    auto blurred = orig;
    blur_plane(blurred, image.width, image.height, k);
    for (std::size_t i = 0; i < orig.size(); ++i) {
      out.pixels[3 * i + c] = to_byte(orig[i] + amount * (orig[i] - blurred[i]));
    }
  }
  return out;
}

std::pair<std::int64_t, std::int64_t> dihedral_point(std::int64_t x, std::int64_t y,
                                                     std::int64_t w, std::int64_t h, int k) {
  if (k < 0 || k > 7) throw std::invalid_argument("dihedral index must be in [0, 8)");
  if (k >= 4) x = w - 1 - x;
  for (int r = 0; r < k % 4; ++r) {
    // Clockwise quarter turn: (x, y) in w x h -> (h-1-y, x) in h x w.
    const std::int64_t nx = h - 1 - y;
    y = x;
    x = nx;
    std::swap(w, h);
  }
  return {x, y};
}

int dihedral_inverse(int k) {
  if (k < 0 || k > 7) throw std::invalid_argument("dihedral index must be in [0, 8)");
  return k >= 4 ? k : (4 - k) % 4;
}

namespace {

template <typename Raster, typename Copy>
Raster dihedral_impl(const Raster& src, int k, Copy copy) {
  const bool swap = (k % 4) % 2 == 1;
  Raster out(swap ? src.height : src.width, swap ? src.width : src.height);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      const auto [nx, ny] = dihedral_point(x, y, src.width, src.height, k);
      copy(out, static_cast<int>(nx), static_cast<int>(ny), x, y);
    }
  return out;
}

}  // namespace

RgbImage dihedral(const RgbImage& image, int k) {
  return dihedral_impl(image, k, [&](RgbImage& out, int nx, int ny, int x, int y) {
    std::copy_n(image.px(x, y), 3, out.px(nx, ny));
  });
}

DensityMap dihedral(const DensityMap& map, int k) {
  return dihedral_impl(map, k, [&](DensityMap& out, int nx, int ny, int x, int y) {
    out.at(nx, ny) = map.at(x, y);
  });
}

AugmentParams sample_augment(std::uint64_t seed, const AugmentRanges& ranges) {
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  AugmentParams p;
  p.h_factor = uniform(ranges.stain_lo, ranges.stain_hi);
  p.e_factor = uniform(ranges.stain_lo, ranges.stain_hi);
  p.d_hue = uniform(-ranges.hue, ranges.hue);
  p.d_sat = uniform(-ranges.sat, ranges.sat);
  p.d_lum = uniform(-ranges.lum, ranges.lum);
  if (uniform(0.0, 1.0) < 0.5) {
    p.blur_sigma = uniform(0.0, ranges.blur_sigma_max);
  } else {
    p.sharpen = uniform(0.0, ranges.sharpen_max);
  }
  p.dihedral = std::uniform_int_distribution<int>(0, 7)(rng);
  return p;
}

RgbImage apply_color(const RgbImage& image, const AugmentParams& params, const StainBasis& basis) {
  RgbImage out = stain_shift(image, params.h_factor, params.e_factor, basis);
  out = hsl_shift(out, params.d_hue, params.d_sat, params.d_lum);
  if (params.blur_sigma > 0.0) out = gaussian_blur(out, params.blur_sigma);
  if (params.sharpen > 0.0) out = unsharp_mask(out, params.sharpen);
  return out;
}

}  // namespace tcr::targets
