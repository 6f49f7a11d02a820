#pragma once

// Reference implementations for matching and threshold tuning, written from
// the definitions and sharing no code with the library paths they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "tcr/eval/tune.hpp"
#include "tcr/scale.hpp"

namespace tcr::testing {

using eval::EvalRoi;
using eval::MatchResult;
using eval::Point;

// Repeatedly accepts the globally smallest (distance, d, l) pair among
// unmatched endpoints. Cubic, no spatial index, no pre-sorting.
inline MatchResult brute_force_match(const std::vector<Point>& dets, const std::vector<Point>& labels,
                              double mpp, double radius_um) {
  MatchResult r;
  std::vector<bool> du(dets.size()), lu(labels.size());
  for (;;) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bd = 0, bl = 0;
    bool found = false;
    for (std::size_t d = 0; d < dets.size(); ++d) {
      if (du[d]) continue;
      for (std::size_t l = 0; l < labels.size(); ++l) {
        if (lu[l]) continue;
        const double dist = std::hypot(double(dets[d].x - labels[l].x), double(dets[d].y - labels[l].y)) * mpp;
        if (dist > radius_um) continue;
        if (!found || dist < best || (dist == best && (d < bd || (d == bd && l < bl)))) {
          best = dist;
          bd = d;
          bl = l;
          found = true;
        }
      }
    }
    if (!found) break;
    du[bd] = lu[bl] = true;
    r.pairs.push_back({bd, bl, best});
  }
  for (std::size_t d = 0; d < dets.size(); ++d)
    if (!du[d]) r.unmatched_detections.push_back(d);
  for (std::size_t l = 0; l < labels.size(); ++l)
    if (!lu[l]) r.unmatched_labels.push_back(l);
  return r;
}

// Eval set: true cells carry I_d in [0.9, 1], spurious peaks I_d in [0, 0.3]
// and sit > 20 px from any label. Tumor fused scores >= 0.58, normal <= 0.52.
inline std::vector<EvalRoi> gap_set(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<EvalRoi> rois;
  for (int r = 0; r < 6; ++r) {
    EvalRoi roi;
    roi.mpp = kMpp40x;
    const double tumor_fraction = 0.1 + 0.15 * r;
    for (int i = 0; i < 40; ++i) {
      const std::int64_t x = 40 * (i % 8), y = 40 * (i / 8);
      const bool tumor = u(rng) < tumor_fraction;
      roi.labels.push_back({x, y, tumor ? CellClass::tumor : CellClass::normal});
      const double score = tumor ? 0.58 + 0.4 * u(rng) : 0.52 * u(rng);
      const std::int64_t jx = std::uniform_int_distribution<int>(-3, 3)(rng);
      roi.candidates.push_back({x + jx, y, {0.9 + 0.1 * u(rng), score, score}});
    }
    for (int i = 0; i < 12; ++i) {
      const double v = i == 0 ? 0.3 : 0.3 * u(rng);
      roi.candidates.push_back({20 + 40 * (i % 7), 20 + 40 * (i / 7), {v, u(rng), u(rng)}});
    }
    std::shuffle(roi.candidates.begin(), roi.candidates.end(), rng);
    rois.push_back(std::move(roi));
  }
  return rois;
}

// Exhaustive sequential grid search from first principles: own matching, own
// F1 and ratio arithmetic. Ties keep the first (smaller) grid point.
inline post::Thresholds independent_grid_search(const std::vector<EvalRoi>& rois, const std::vector<double>& grid,
                                                double alpha, double radius_um = eval::kMatchRadiusUm) {
  double best_f1 = -1.0, t_d = 0.0;
  for (double t : grid) {
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (const auto& roi : rois) {
      std::vector<Point> dets, labels;
      for (const auto& c : roi.candidates)
        if (c.f.i_d >= t) dets.push_back({c.x, c.y});
      for (const auto& l : roi.labels) labels.push_back({l.x, l.y});
      const auto m = brute_force_match(dets, labels, roi.mpp, radius_um);
      tp += static_cast<std::int64_t>(m.pairs.size());
      fp += static_cast<std::int64_t>(m.unmatched_detections.size());
      fn += static_cast<std::int64_t>(m.unmatched_labels.size());
    }
    const double f1 = tp == 0 ? 0.0 : 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
    if (f1 > best_f1) best_f1 = f1, t_d = t;
  }
  double best_err = std::numeric_limits<double>::infinity(), t_c = 0.0;
  for (double t : grid) {
    double err = 0.0;
    for (const auto& roi : rois) {
      std::int64_t n = 0, nt = 0, ln = 0, lt = 0;
      for (const auto& c : roi.candidates) {
        if (c.f.i_d < t_d) continue;
        ++n;
        nt += alpha * c.f.i_c + (1.0 - alpha) * c.f.i_s > t;
      }
      for (const auto& l : roi.labels) ++ln, lt += l.cls == CellClass::tumor;
      const double pred = n == 0 ? 0.0 : static_cast<double>(nt) / static_cast<double>(n);
      const double truth = ln == 0 ? 0.0 : static_cast<double>(lt) / static_cast<double>(ln);
      err += std::abs(pred - truth);
    }
    err /= static_cast<double>(rois.size());
    if (err < best_err) best_err = err, t_c = t;
  }
  return {t_d, t_c, alpha};
}

struct OracleReport {
  double detection_f1 = 0.0;
  double classification_accuracy = 0.0;
  double e_tcr = 0.0;
};

// Pooled detection F1, accuracy over matched cells and mean absolute TCR error,
// computed from the definitions with the brute-force matcher.
inline OracleReport independent_evaluate(const std::vector<EvalRoi>& rois, const post::Thresholds& t,
                                         double radius_um = eval::kMatchRadiusUm) {
  std::int64_t tp = 0, fp = 0, fn = 0, correct = 0;
  double err = 0.0;
  for (const auto& roi : rois) {
    std::vector<Point> dets, labels;
    std::vector<bool> tumor;
    for (const auto& c : roi.candidates) {
      if (c.f.i_d < t.t_d) continue;
      dets.push_back({c.x, c.y});
      tumor.push_back(t.alpha * c.f.i_c + (1.0 - t.alpha) * c.f.i_s > t.t_c);
    }
    std::int64_t lt = 0;
    for (const auto& l : roi.labels) labels.push_back({l.x, l.y}), lt += l.cls == CellClass::tumor;
    const auto m = brute_force_match(dets, labels, roi.mpp, radius_um);
    tp += static_cast<std::int64_t>(m.pairs.size());
    fp += static_cast<std::int64_t>(m.unmatched_detections.size());
    fn += static_cast<std::int64_t>(m.unmatched_labels.size());
    for (const auto& p : m.pairs) correct += tumor[p.detection] == (roi.labels[p.label].cls == CellClass::tumor);
    std::int64_t nt = 0;
    for (bool b : tumor) nt += b;
    const double pred = tumor.empty() ? 0.0 : static_cast<double>(nt) / static_cast<double>(tumor.size());
    const double truth = labels.empty() ? 0.0 : static_cast<double>(lt) / static_cast<double>(labels.size());
    err += std::abs(pred - truth);
  }
  OracleReport r;
  r.detection_f1 = tp == 0 ? 0.0 : 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
  r.classification_accuracy = tp == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(tp);
  r.e_tcr = rois.empty() ? 0.0 : err / static_cast<double>(rois.size());
  return r;
}

}  // namespace tcr::testing
