#include "tcr/targets/targets.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tcr::targets {

PeakShape PeakShape::at_magnification(double magnification) {
  if (!(magnification > 0.0)) throw std::invalid_argument("magnification must be positive");
  const double f = magnification / 40.0;
  return {4.0 * f, 2.0 * f};
}

PeakKernel::PeakKernel(const PeakShape& shape) {
  if (shape.disk_radius < 0.0 || !(shape.sigma > 0.0)) {
    throw std::invalid_argument("peak shape needs radius >= 0 and sigma > 0");
  }
  const int disk = static_cast<int>(std::floor(shape.disk_radius));
  const double cutoff = 3.0 * shape.sigma;
  const int g = static_cast<int>(std::floor(cutoff));
  radius = disk + g;
  const int side = 2 * radius + 1;
  std::vector<double> gauss((2 * g + 1) * (2 * g + 1));
  for (int dy = -g; dy <= g; ++dy)
    for (int dx = -g; dx <= g; ++dx) {
      const double d2 = dx * dx + dy * dy;
      gauss[(dy + g) * (2 * g + 1) + dx + g] =
          d2 <= cutoff * cutoff ? std::exp(-d2 / (2.0 * shape.sigma * shape.sigma)) : 0.0;
    }
  std::vector<double> acc(static_cast<std::size_t>(side) * side, 0.0);
  const double r2 = shape.disk_radius * shape.disk_radius;
  for (int py = -disk; py <= disk; ++py)
    for (int px = -disk; px <= disk; ++px) {
      if (px * px + py * py > r2) continue;
      for (int dy = -g; dy <= g; ++dy)
        for (int dx = -g; dx <= g; ++dx) {
          acc[(py + dy + radius) * side + px + dx + radius] += gauss[(dy + g) * (2 * g + 1) + dx + g];
        }
    }
  const double peak = acc[radius * side + radius];
  values.resize(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) values[i] = static_cast<float>(acc[i] / peak);
  values[radius * side + radius] = 1.0f;
}

DensityMap make_point_target(std::span<const PointAnnotation> points, int width, int height,
                             const Resampling& resampling, const PeakShape& shape, PointMode mode,
                             TargetStats* stats) {
  DensityMap map(width, height);
  const PeakKernel kernel(shape);
  const int r = kernel.radius;
  for (const auto& p : points) {
    if (mode == PointMode::tumor_only && p.cls != CellClass::tumor) continue;
    const std::int64_t cx = resampling.to_raster_x(p.x);
    const std::int64_t cy = resampling.to_raster_y(p.y);
    if (cx < 0 || cy < 0 || cx >= width || cy >= height) {
      if (stats) ++stats->skipped;
      continue;
    }
    const int y0 = static_cast<int>(std::max<std::int64_t>(0, cy - r));
    const int y1 = static_cast<int>(std::min<std::int64_t>(height - 1, cy + r));
    const int x0 = static_cast<int>(std::max<std::int64_t>(0, cx - r));
    const int x1 = static_cast<int>(std::min<std::int64_t>(width - 1, cx + r));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        float& v = map.at(x, y);
        v = std::max(v, kernel.at(x - static_cast<int>(cx), y - static_cast<int>(cy)));
      }
  }
  return map;
}

DensityMap make_area_target(std::span<const PolygonAnnotation> polygons, int width, int height,
                            const Resampling& resampling, TargetStats* stats) {
  DensityMap map(width, height);
  std::vector<double> crossings;
  for (const auto& poly : polygons) {
    const auto& v = poly.vertices;
    if (v.size() < 3) {
      if (stats) ++stats->skipped;
      continue;
    }
    std::vector<std::pair<double, double>> pts;
    pts.reserve(v.size());
    for (const auto& [x, y] : v) {
      pts.emplace_back(resampling.to_raster(x, resampling.origin_x),
                       resampling.to_raster(y, resampling.origin_y));
    }
    for (int row = 0; row < height; ++row) {
      const double cy = row + 0.5;
      crossings.clear();
      for (std::size_t i = 0, j = pts.size() - 1; i < pts.size(); j = i++) {
        const auto [xi, yi] = pts[i];
        const auto [xj, yj] = pts[j];
        if ((yi <= cy) != (yj <= cy)) crossings.push_back(xi + (cy - yi) * (xj - xi) / (yj - yi));
      }
      std::sort(crossings.begin(), crossings.end());
      for (std::size_t k = 0; k + 1 < crossings.size(); k += 2) {
        // Pixel centers c with crossings[k] <= c < crossings[k+1].
        const double lo = std::ceil(crossings[k] - 0.5);
        const double hi = std::ceil(crossings[k + 1] - 0.5);
        const int a = static_cast<int>(std::clamp(lo, 0.0, static_cast<double>(width)));
        const int b = static_cast<int>(std::clamp(hi, 0.0, static_cast<double>(width)));
        for (int x = a; x < b; ++x) map.at(x, row) = 1.0f;
      }
    }
  }
  return map;
}

}  // namespace tcr::targets
