#pragma once

#include <span>
#include <vector>

#include "tcr/annotations.hpp"
#include "tcr/image.hpp"
#include "tcr/scale.hpp"

namespace tcr::targets {

enum class PointMode { all, tumor_only };

/// Peak footprint: a disk of `disk_radius` convolved with a Gaussian of
/// `sigma` (truncated at 3 sigma), scaled to unit height at the center.
struct PeakShape {
  double disk_radius = 4.0;
  double sigma = 2.0;

  /// Radius 4, sigma 2 at 40X, shrinking linearly with magnification.
  static PeakShape at_magnification(double magnification);
};

/// Square stamp of side 2*radius+1 with peak value exactly 1 at the center.
struct PeakKernel {
  int radius = 0;
  std::vector<float> values;

  explicit PeakKernel(const PeakShape& shape);
  [[nodiscard]] float at(int dx, int dy) const {
    return values[static_cast<std::size_t>(dy + radius) * (2 * radius + 1) + (dx + radius)];
  }
};

struct TargetStats {
  int skipped = 0;  ///< points outside the map or degenerate polygons
};

/// Density target for the points selected by `mode`, rendered into a
/// width x height raster; overlapping peaks combine by per-pixel max.
DensityMap make_point_target(std::span<const PointAnnotation> points, int width, int height,
                             const Resampling& resampling, const PeakShape& shape, PointMode mode,
                             TargetStats* stats = nullptr);

/// 1 inside any polygon (even-odd rule at pixel centers), 0 elsewhere.
DensityMap make_area_target(std::span<const PolygonAnnotation> polygons, int width, int height,
                            const Resampling& resampling, TargetStats* stats = nullptr);

}  // namespace tcr::targets
