#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tcr/annotations.hpp"

namespace tcr::eval {

struct Point {
  std::int64_t x = 0;
  std::int64_t y = 0;
};

inline constexpr double kMatchRadiusUm = 3.2;

struct Match {
  std::size_t detection = 0;
  std::size_t label = 0;
  double distance_um = 0.0;

  friend bool operator==(const Match&, const Match&) = default;
};

struct MatchResult {
  std::vector<Match> pairs;                    ///< in acceptance order
  std::vector<std::size_t> unmatched_detections;  ///< false positives, ascending
  std::vector<std::size_t> unmatched_labels;      ///< false negatives, ascending
};

/// Greedy closest-first matching: all pairs within the radius, sorted by
/// (distance, detection index, label index), accepted unless an endpoint is
/// already taken. `mpp` is microns per level-0 pixel.
MatchResult greedy_match(std::span<const Point> detections, std::span<const Point> labels,
                         double mpp, double radius_um = kMatchRadiusUm);

struct DetectionMetrics {
  std::int64_t tp = 0, fp = 0, fn = 0;
  double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;
  bool degenerate = false;  ///< some denominator was zero
};

/// ACC = TP/(TP+FP+FN), PRE = TP/(TP+FP), REC = TP/(TP+FN), F1 = 2PR/(P+R).
DetectionMetrics detection_metrics(std::int64_t tp, std::int64_t fp, std::int64_t fn);
DetectionMetrics detection_metrics(const MatchResult& m);

struct ClassificationMetrics {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;  ///< tumor is positive
  double accuracy = 0.0;
  double precision_pos = 0.0, recall_pos = 0.0;
  double precision_neg = 0.0, recall_neg = 0.0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;  ///< two-class means, macro F1
  bool degenerate = false;
};

ClassificationMetrics classification_metrics(std::int64_t tp, std::int64_t fp, std::int64_t tn,
                                             std::int64_t fn);
/// Confusion over (predicted, true) class pairs of matched cells.
ClassificationMetrics classification_metrics(std::span<const CellClass> predicted,
                                             std::span<const CellClass> truth);

/// Mean of |predicted - true| over ROIs.
double tcr_error(std::span<const double> predicted, std::span<const double> truth);

nlohmann::json to_json(const DetectionMetrics& m);
nlohmann::json to_json(const ClassificationMetrics& m);

}  // namespace tcr::eval
