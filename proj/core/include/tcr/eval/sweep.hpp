#pragma once

#include <functional>
#include <memory>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tcr/annotations.hpp"
#include "tcr/eval/metrics.hpp"
#include "tcr/model/unet.hpp"
#include "tcr/post/postprocess.hpp"
#include "tcr/scale.hpp"
#include "tcr/slide/pyramid.hpp"

namespace tcr::eval {

/// Resize factors relative to level 0 (1.0 = 40X).
inline constexpr double kSweepFactors[] = {1.0, 0.8, 0.6, 0.5, 0.4, 0.3, 0.25, 0.2};

enum class SweepMode { det, cls, det_cls };
const char* to_string(SweepMode m);
SweepMode sweep_mode_from(const std::string& name);

/// Produces [map_d, map_c] for an image read at one factor. `window` is the
/// image's placement in the whole-slide raster at that factor.
struct MapSource {
  std::function<std::vector<DensityMap>(const RgbImage& image, const Rect& window, double factor)> maps;
  int levels = 0;  ///< reads are widened to multiples of 2^levels
};

/// Wraps a two-map model.
MapSource model_source(std::shared_ptr<const model::UNet> model);

struct SweepRoi {
  const slide::SlidePyramid* slide = nullptr;
  Rect rect;  ///< level-0
  std::vector<PointAnnotation> labels;  ///< points inside `rect`
};

struct SweepPoint {
  double factor = 0.0;
  SweepMode mode = SweepMode::det;
  bool missing = false;  ///< no model for this factor; f1 unset
  DetectionMetrics counts;  ///< det and det_cls
  ClassificationMetrics classification;  ///< cls
  double f1 = 0.0;
};

/// For each factor and mode: det scores peaks of map_d against labels; cls
/// classifies ground-truth positions by map_c (macro F1); det_cls counts a
/// detection correct only when matched and correctly classified.
std::vector<SweepPoint> magnification_sweep(const std::map<double, MapSource>& sources,
                                            std::span<const SweepRoi> rois, std::span<const SweepMode> modes,
                                            const post::Thresholds& thresholds, std::span<const double> factors = kSweepFactors,
                                            double radius_um = kMatchRadiusUm);

/// `factor,det_f1,cls_f1,det_cls_f1,missing`; empty cells for missing points.
std::string sweep_csv(std::span<const SweepPoint> points);
nlohmann::json to_json(std::span<const SweepPoint> points);

}  // namespace tcr::eval
