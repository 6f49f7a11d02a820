#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "tcr/annotations.hpp"
#include "tcr/image.hpp"
#include "tcr/scale.hpp"
#include "tcr/slide/pyramid.hpp"

namespace tcr::slide {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct SynthParams {
  int width = 1024;  ///< level-0 pixels
  int height = 1024;
  double mpp = kMpp40x;
  Range density_per_mm2{3000.0, 7000.0};  ///< local cell density, varies smoothly
  double min_spacing_um = 7.0;            ///< center-to-center, > 2 x 3.2 um
  Range normal_radius_um{2.0, 2.5};       ///< semi-major axis
  Range tumor_radius_um{2.8, 3.4};
  Range normal_elongation{1.0, 1.25};  ///< major / minor axis
  Range tumor_elongation{1.35, 1.8};
  int tumor_blobs = 2;
  Range blob_radius_um{40.0, 90.0};
  /// Fraction of tumor cells drawn with normal morphology; only the
  /// surrounding region identifies them.
  double ambiguous_fraction = 0.0;
  /// Stroma tint inside tumor regions (extra eosin optical density).
  double region_tint = 0.0;
  int roi_grid = 2;  ///< evaluation ROIs: roi_grid x roi_grid partition
  double color_jitter = 0.04;
  std::uint64_t seed = 1;

  void validate() const;
};

struct RegionTruth {
  Rect rect;
  CellCounts counts;
};

struct SyntheticSlide {
  RgbImage image;  ///< level 0
  Annotations annotations;
  std::vector<RegionTruth> regions;  ///< one per annotation ROI
};

/// Deterministic for a given parameter set.
SyntheticSlide generate_synthetic_slide(const SynthParams& params);

/// Generates the slide, writes the pyramid to `dir` and `annotations.json`
/// beside the manifest.
SyntheticSlide write_synthetic_slide(const SynthParams& params, const std::filesystem::path& dir,
                                     int tile_size = 256);

/// Bridson Poisson-disk sampling in [x0, x1) x [y0, y1) with minimum distance r.
std::vector<std::pair<double, double>> poisson_disk(double x0, double y0, double x1, double y1,
                                                    double r, std::uint64_t seed);

}  // namespace tcr::slide
