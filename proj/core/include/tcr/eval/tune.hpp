#pragma once

#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tcr/annotations.hpp"
#include "tcr/eval/metrics.hpp"
#include "tcr/post/postprocess.hpp"
#include "tcr/scale.hpp"

namespace tcr::eval {

/// A local maximum of map_d found at t_d = 0, with its sampled features.
/// Raising t_d only filters this list, so one peak pass serves every grid point.
struct Candidate {
  std::int64_t x = 0;  ///< level-0 pixels
  std::int64_t y = 0;
  post::Features f;
};

/// Peaks of map_d at t_d = 0 with features, mapped to level-0 pixels through
/// `raster` (the resampling that produced map_d).
std::vector<Candidate> make_candidates(const DensityMap& map_d, const DensityMap& map_c,
                                       const DensityMap* map_s, const post::ScaleTransform& to_s,
                                       const Resampling& raster);

/// One evaluation region: candidates over the ROI and its ground truth.
struct EvalRoi {
  std::vector<Candidate> candidates;
  std::vector<PointAnnotation> labels;
  double mpp = 0.0;  ///< level-0 microns per pixel
};

/// Multiples of `step` strictly inside (0, 1): step 0.05 -> 0.05 ... 0.95.
std::vector<double> threshold_grid(double step);

struct RoiEvaluation {
  DetectionMetrics detection;
  ClassificationMetrics classification;  ///< matched cells only
  double predicted_tcr = 0.0;
  double true_tcr = 0.0;
};

RoiEvaluation evaluate_roi(const EvalRoi& roi, const post::Thresholds& t,
                           double radius_um = kMatchRadiusUm);

struct EvalReport {
  DetectionMetrics detection;            ///< pooled over ROIs
  ClassificationMetrics classification;  ///< pooled over ROIs
  double e_tcr = 0.0;
  std::vector<RoiEvaluation> rois;
};

EvalReport evaluate(std::span<const EvalRoi> rois, const post::Thresholds& t,
                    double radius_um = kMatchRadiusUm);

nlohmann::json to_json(const EvalReport& r);

struct TuneOptions {
  std::vector<double> grid = threshold_grid(0.05);
  double alpha = 0.5;
  double radius_um = kMatchRadiusUm;
  bool joint = false;  ///< also run the 2-D search as a diagnostic
};

struct GridValue {
  double t = 0.0;
  double value = 0.0;
};

struct JointResult {
  double t_d = 0.0;
  double t_c = 0.0;
  double e_tcr = 0.0;
};

struct TuneResult {
  post::Thresholds thresholds;
  double detection_f1 = 0.0;
  double e_tcr = 0.0;
  std::vector<GridValue> stage1;  ///< t_d -> pooled detection F1
  std::vector<GridValue> stage2;  ///< t_c -> E_TCR at the chosen t_d
  std::optional<JointResult> joint;
};

/// Stage 1 picks t_d maximizing pooled detection F1; stage 2 fixes it and
/// picks t_c minimizing E_TCR. Ties go to the smaller threshold.
TuneResult tune_thresholds(std::span<const EvalRoi> rois, const TuneOptions& options = {});

nlohmann::json to_json(const TuneResult& r);

}  // namespace tcr::eval
