#include "tcr/slide/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "tcr/io.hpp"
#include "tcr/targets/augment.hpp"
#include "tcr/targets/targets.hpp"

namespace tcr::slide {

namespace {

constexpr double kPi = std::numbers::pi;

std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Uniform in [-1, 1) from a hashed lattice coordinate.
double hash_unit(std::uint64_t seed, std::int64_t x, std::int64_t y) {
  const auto h = mix(seed ^ mix(static_cast<std::uint64_t>(x) * 0x100000001b3ull ^ mix(static_cast<std::uint64_t>(y))));
  return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
}

/// Smooth value noise in [-1, 1] with lattice spacing `cell` pixels.
double value_noise(std::uint64_t seed, double x, double y, double cell) {
  const double u = x / cell, v = y / cell;
  const double fu = std::floor(u), fv = std::floor(v);
  const auto iu = static_cast<std::int64_t>(fu), iv = static_cast<std::int64_t>(fv);
  auto s = [](double t) { return t * t * (3.0 - 2.0 * t); };
  const double a = s(u - fu), b = s(v - fv);
  const double top = hash_unit(seed, iu, iv) * (1 - a) + hash_unit(seed, iu + 1, iv) * a;
  const double bot = hash_unit(seed, iu, iv + 1) * (1 - a) + hash_unit(seed, iu + 1, iv + 1) * a;
  return top * (1 - b) + bot * b;
}

double uniform(std::mt19937_64& rng, const Range& r) {
  return r.lo + (r.hi - r.lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

PolygonAnnotation make_blob(std::mt19937_64& rng, const SynthParams& p) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double cx = u(rng) * p.width, cy = u(rng) * p.height;
  const double radius = uniform(rng, p.blob_radius_um) / p.mpp;
  std::array<double, 4> amp{}, phase{};
  for (std::size_t k = 0; k < amp.size(); ++k) {
    amp[k] = u(rng) * 0.25 / static_cast<double>(k + 2);
    phase[k] = u(rng) * 2.0 * kPi;
  }
  PolygonAnnotation poly;
  constexpr int kVertices = 96;
  for (int i = 0; i < kVertices; ++i) {
    const double t = 2.0 * kPi * i / kVertices;
    double r = 1.0;
    for (std::size_t k = 0; k < amp.size(); ++k) r += amp[k] * std::cos(static_cast<double>(k + 2) * t + phase[k]);
    poly.vertices.emplace_back(cx + radius * r * std::cos(t), cy + radius * r * std::sin(t));
  }
  return poly;
}

struct Nucleus {
  double cx, cy;   // continuous center
  double a, b;     // semi-axes, pixels
  double angle;
  double h, e;     // stain optical densities
  std::uint64_t texture;
};

}  // namespace

void SynthParams::validate() const {
  if (width <= 0 || height <= 0) throw std::invalid_argument("synthetic slide needs positive size");
  if (!(mpp > 0.0)) throw std::invalid_argument("synthetic slide needs positive mpp");
  if (!(min_spacing_um > 6.4)) throw std::invalid_argument("min_spacing_um must exceed twice the 3.2 um match radius");
  if (density_per_mm2.lo < 0 || density_per_mm2.hi < density_per_mm2.lo) throw std::invalid_argument("bad density range");
  if (normal_radius_um.lo <= 0 || normal_radius_um.hi < normal_radius_um.lo || tumor_radius_um.lo <= 0 ||
      tumor_radius_um.hi < tumor_radius_um.lo) {
    throw std::invalid_argument("bad nucleus radius range");
  }
  if (2.0 * std::max(normal_radius_um.hi, tumor_radius_um.hi) >= min_spacing_um) {
    throw std::invalid_argument("nuclei would overlap at the minimum spacing");
  }
  if (normal_elongation.lo < 1.0 || tumor_elongation.lo < 1.0) throw std::invalid_argument("elongation must be >= 1");
  if (tumor_blobs < 0 || blob_radius_um.lo <= 0 || blob_radius_um.hi < blob_radius_um.lo) throw std::invalid_argument("bad blob parameters");
  if (ambiguous_fraction < 0 || ambiguous_fraction > 1) throw std::invalid_argument("ambiguous_fraction must be in [0,1]");
  if (roi_grid < 1) throw std::invalid_argument("roi_grid must be >= 1");
}

std::vector<std::pair<double, double>> poisson_disk(double x0, double y0, double x1, double y1, double r,
                                                    std::uint64_t seed) {
  std::vector<std::pair<double, double>> pts;
  if (x1 <= x0 || y1 <= y0) return pts;
  const double cell = r / std::sqrt(2.0);
  const auto gw = static_cast<std::int64_t>(std::ceil((x1 - x0) / cell));
  const auto gh = static_cast<std::int64_t>(std::ceil((y1 - y0) / cell));
  std::vector<std::int64_t> grid(static_cast<std::size_t>(gw * gh), -1);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto gidx = [&](double x, double y) {
    const auto gx = std::min<std::int64_t>(gw - 1, static_cast<std::int64_t>((x - x0) / cell));
    const auto gy = std::min<std::int64_t>(gh - 1, static_cast<std::int64_t>((y - y0) / cell));
    return std::pair{gx, gy};
  };
  auto fits = [&](double x, double y) {
    if (x < x0 || x >= x1 || y < y0 || y >= y1) return false;
    const auto [gx, gy] = gidx(x, y);
    for (std::int64_t yy = std::max<std::int64_t>(0, gy - 2); yy <= std::min(gh - 1, gy + 2); ++yy)
      for (std::int64_t xx = std::max<std::int64_t>(0, gx - 2); xx <= std::min(gw - 1, gx + 2); ++xx) {
        const auto k = grid[static_cast<std::size_t>(yy * gw + xx)];
        if (k < 0) continue;
        const double dx = pts[static_cast<std::size_t>(k)].first - x, dy = pts[static_cast<std::size_t>(k)].second - y;
        if (dx * dx + dy * dy < r * r) return false;
      }
    return true;
  };
  auto add = [&](double x, double y) {
    const auto [gx, gy] = gidx(x, y);
    grid[static_cast<std::size_t>(gy * gw + gx)] = static_cast<std::int64_t>(pts.size());
    pts.emplace_back(x, y);
  };
  add(x0 + u(rng) * (x1 - x0), y0 + u(rng) * (y1 - y0));
  std::vector<std::size_t> active{0};
  constexpr int kAttempts = 30;
  while (!active.empty()) {
    const std::size_t pick = static_cast<std::size_t>(u(rng) * static_cast<double>(active.size()));
    const auto [px, py] = pts[active[pick]];
    bool placed = false;
    for (int a = 0; a < kAttempts; ++a) {
      const double rho = r * (1.0 + u(rng)), theta = 2.0 * kPi * u(rng);
      const double x = px + rho * std::cos(theta), y = py + rho * std::sin(theta);
      if (fits(x, y)) {
        active.push_back(pts.size());
        add(x, y);
        placed = true;
        break;
      }
    }
    if (!placed) {
      active[pick] = active.back();
      active.pop_back();
    }
  }
  return pts;
}

SyntheticSlide generate_synthetic_slide(const SynthParams& p) {
  p.validate();
  std::mt19937_64 rng(p.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  SyntheticSlide out;
  out.annotations.mpp = p.mpp;
  for (int i = 0; i < p.tumor_blobs; ++i) out.annotations.polygons.push_back(make_blob(rng, p));

  // Sample on a lattice widened by the rounding slack so integer centers keep the spacing.
  const double spacing_px = p.min_spacing_um / p.mpp + std::sqrt(2.0);
  const double margin = std::max(p.normal_radius_um.hi, p.tumor_radius_um.hi) / p.mpp + 2.0;
  const auto samples = poisson_disk(margin, margin, p.width - margin, p.height - margin, spacing_px, mix(p.seed ^ 0x5eed));
  const double area_mm2 = (p.width - 2 * margin) * (p.height - 2 * margin) * p.mpp * p.mpp * 1e-6;
  const double achieved = area_mm2 > 0 ? static_cast<double>(samples.size()) / area_mm2 : 0.0;
  if (p.density_per_mm2.hi > achieved * 1.02 && !samples.empty()) {
    throw std::invalid_argument("density " + std::to_string(p.density_per_mm2.hi) +
                                "/mm2 is infeasible at the minimum spacing (max about " +
                                std::to_string(static_cast<int>(achieved)) + "/mm2)");
  }
  const std::uint64_t density_seed = mix(p.seed ^ 0xde25);
  const double density_cell = 60.0 / p.mpp;

  std::vector<Nucleus> nuclei;
  for (const auto& [sx, sy] : samples) {
    const double f = 0.5 + 0.5 * value_noise(density_seed, sx, sy, density_cell);
    const double density = p.density_per_mm2.lo + (p.density_per_mm2.hi - p.density_per_mm2.lo) * f;
    const double keep = u(rng);
    if (keep >= density / achieved) continue;
    const auto ix = static_cast<std::int64_t>(std::floor(sx)), iy = static_cast<std::int64_t>(std::floor(sy));
    bool tumor = false;
    for (const auto& poly : out.annotations.polygons) tumor = tumor || polygon_contains(poly, ix + 0.5, iy + 0.5);
    const bool looks_tumor = tumor && u(rng) >= p.ambiguous_fraction;
    Nucleus n{};
    n.cx = ix + 0.5;
    n.cy = iy + 0.5;
    n.a = uniform(rng, looks_tumor ? p.tumor_radius_um : p.normal_radius_um) / p.mpp;
    n.b = n.a / uniform(rng, looks_tumor ? p.tumor_elongation : p.normal_elongation);
    n.angle = u(rng) * kPi;
    n.h = looks_tumor ? 0.75 + 0.2 * u(rng) : 0.45 + 0.15 * u(rng);
    n.e = looks_tumor ? 0.16 : 0.10;
    n.texture = rng();
    nuclei.push_back(n);
    out.annotations.points.push_back({ix, iy, tumor ? CellClass::tumor : CellClass::normal});
  }

  // Stroma optical densities with smooth variation and an optional region tint.
  const int w = p.width, h = p.height;
  const std::uint64_t stroma_seed = mix(p.seed ^ 0x57a0);
  const double jitter_h = 1.0 + p.color_jitter * (2 * u(rng) - 1);
  const double jitter_e = 1.0 + p.color_jitter * (2 * u(rng) - 1);
  DensityMap region;
  if (p.region_tint != 0.0 && !out.annotations.polygons.empty()) {
    region = targets::make_area_target(out.annotations.polygons, w, h, Resampling{});
  }
  std::vector<float> od_h(static_cast<std::size_t>(w) * h), od_e(od_h.size());
  const double fiber_cell = 6.0 / p.mpp, patch_cell = 25.0 / p.mpp;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double fiber = value_noise(stroma_seed, x, y, fiber_cell);
      const double patch = value_noise(stroma_seed + 1, x, y, patch_cell);
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      double e = 0.28 + 0.07 * fiber + 0.05 * patch;
      if (!region.values.empty()) e += p.region_tint * region.values[i];
      od_h[i] = static_cast<float>(0.05 + 0.02 * patch);
      od_e[i] = static_cast<float>(std::max(0.02, e));
    }

  for (const auto& n : nuclei) {
    const double ca = std::cos(n.angle), sa = std::sin(n.angle);
    const int x0 = std::max(0, static_cast<int>(std::floor(n.cx - n.a - 1)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(n.cx + n.a + 1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(n.cy - n.a - 1)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(n.cy + n.a + 1)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dx = x + 0.5 - n.cx, dy = y + 0.5 - n.cy;
        const double pu = dx * ca + dy * sa, pv = -dx * sa + dy * ca;
        const double rho = std::sqrt((pu / n.a) * (pu / n.a) + (pv / n.b) * (pv / n.b));
        const double cover = std::clamp((1.0 - rho) * n.b + 0.5, 0.0, 1.0);
        if (cover <= 0.0) continue;
        const double grain = 1.0 + 0.12 * hash_unit(n.texture, x, y);
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        od_h[i] = static_cast<float>(od_h[i] * (1 - cover) + n.h * grain * cover);
        od_e[i] = static_cast<float>(od_e[i] * (1 - cover) + n.e * cover);
      }
  }

  const auto basis = targets::StainBasis::he();
  const auto hv = basis.column(0), ev = basis.column(1);
  const std::uint64_t pixel_seed = mix(p.seed ^ 0x9e7);
  out.image = RgbImage(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      auto* px = out.image.px(x, y);
      for (int c = 0; c < 3; ++c) {
        const double od = od_h[i] * jitter_h * hv[c] + od_e[i] * jitter_e * ev[c];
        const double v = 255.0 * std::pow(10.0, -od) + 2.0 * hash_unit(pixel_seed + c, x, y);
        px[c] = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
    }

  for (int gy = 0; gy < p.roi_grid; ++gy)
    for (int gx = 0; gx < p.roi_grid; ++gx) {
      const std::int64_t rx0 = static_cast<std::int64_t>(gx) * w / p.roi_grid, rx1 = static_cast<std::int64_t>(gx + 1) * w / p.roi_grid;
      const std::int64_t ry0 = static_cast<std::int64_t>(gy) * h / p.roi_grid, ry1 = static_cast<std::int64_t>(gy + 1) * h / p.roi_grid;
      const Rect r{rx0, ry0, rx1 - rx0, ry1 - ry0};
      out.annotations.rois.push_back(r);
      out.regions.push_back({r, count_cells(out.annotations.points, r)});
    }
  return out;
}

SyntheticSlide write_synthetic_slide(const SynthParams& params, const std::filesystem::path& dir, int tile_size) {
  auto slide = generate_synthetic_slide(params);
  build_pyramid(slide.image, params.mpp, dir, tile_size);
  save_annotations(slide.annotations, dir / "annotations.json");
  return slide;
}

}  // namespace tcr::slide
