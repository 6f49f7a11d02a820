#pragma once

#include <cmath>
#include <cstdint>

namespace tcr {

/// Microns per pixel at 40X (4.4 pixels per micron).
inline constexpr double kMpp40x = 1.0 / 4.4;

/// Microns per pixel at a nominal objective magnification.
inline double mpp_at(double magnification) { return kMpp40x * 40.0 / magnification; }

/// Nominal magnification of a raster sampled at `mpp`.
inline double magnification_of(double mpp) { return kMpp40x * 40.0 / mpp; }

/// Level-0 to raster factor for reading a slide at `magnification`. Values
/// within 1e-9 of a power of two are snapped to it so dyadic reads are exact.
inline double read_factor(double slide_mpp, double magnification) {
  const double f = slide_mpp / mpp_at(magnification);
  const double snapped = std::exp2(std::round(std::log2(f)));
  return std::abs(f - snapped) <= 1e-9 * snapped ? snapped : f;
}

/// Resampling between level-0 pixels and a raster at `scale` (output pixels
/// per level-0 pixel) whose pixel 0 starts at level-0 `origin`. Pixel i covers
/// the continuous interval [i, i+1); level-0 pixel j has its center at j+0.5.
struct Resampling {
  std::int64_t origin_x = 0;
  std::int64_t origin_y = 0;
  double scale = 1.0;

  /// Raster pixel containing the center of level-0 pixel (x, y).
  [[nodiscard]] std::int64_t to_raster_x(std::int64_t x) const {
    return static_cast<std::int64_t>(std::floor((static_cast<double>(x - origin_x) + 0.5) * scale));
  }
  [[nodiscard]] std::int64_t to_raster_y(std::int64_t y) const {
    return static_cast<std::int64_t>(std::floor((static_cast<double>(y - origin_y) + 0.5) * scale));
  }
  /// Level-0 pixel containing the center of raster pixel i.
  [[nodiscard]] std::int64_t to_level0_x(std::int64_t i) const {
    return origin_x + static_cast<std::int64_t>(std::floor((static_cast<double>(i) + 0.5) / scale));
  }
  [[nodiscard]] std::int64_t to_level0_y(std::int64_t i) const {
    return origin_y + static_cast<std::int64_t>(std::floor((static_cast<double>(i) + 0.5) / scale));
  }
  /// Continuous level-0 coordinate to continuous raster coordinate.
  [[nodiscard]] double to_raster(double v, std::int64_t origin) const {
    return (v - static_cast<double>(origin)) * scale;
  }
};

}  // namespace tcr
