#include "tcr/eval/tune.hpp"

#include <cmath>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace tcr::eval {

std::vector<double> threshold_grid(double step) {
  if (!(step > 0.0) || step >= 1.0) throw std::invalid_argument("grid step must be in (0, 1)");
  std::vector<double> grid;
  for (int k = 1;; ++k) {
    const double t = std::round(k * step * 1e9) / 1e9;
    if (t >= 1.0) break;
    grid.push_back(t);
  }
  return grid;
}

std::vector<Candidate> make_candidates(const DensityMap& map_d, const DensityMap& map_c,
                                       const DensityMap* map_s, const post::ScaleTransform& to_s,
                                       const Resampling& raster) {
  const auto peaks = post::detect_peaks(map_d, 0.0);
  const auto features = post::sample_scores(peaks, map_c, map_s, to_s);
  std::vector<Candidate> out;
  out.reserve(peaks.size());
  for (std::size_t i = 0; i < peaks.size(); ++i) {
    out.push_back({raster.to_level0_x(peaks[i].x), raster.to_level0_y(peaks[i].y), features[i]});
  }
  return out;
}

namespace {

struct Selection {
  std::vector<Point> points;
  std::vector<std::size_t> index;  // into candidates
};

Selection select(const EvalRoi& roi, double t_d) {
  Selection s;
  for (std::size_t i = 0; i < roi.candidates.size(); ++i) {
    const auto& c = roi.candidates[i];
    if (c.f.i_d >= t_d) {
      s.points.push_back({c.x, c.y});
      s.index.push_back(i);
    }
  }
  return s;
}

std::vector<Point> label_points(const EvalRoi& roi) {
  std::vector<Point> pts;
  pts.reserve(roi.labels.size());
  for (const auto& l : roi.labels) pts.push_back({l.x, l.y});
  return pts;
}

double true_ratio(const EvalRoi& roi) {
  std::int64_t tumor = 0;
  for (const auto& l : roi.labels) tumor += l.cls == CellClass::tumor;
  return roi.labels.empty() ? 0.0 : static_cast<double>(tumor) / static_cast<double>(roi.labels.size());
}

double predicted_ratio(const EvalRoi& roi, const Selection& s, const post::Thresholds& t) {
  if (s.index.empty()) return 0.0;
  std::int64_t tumor = 0;
  for (std::size_t i : s.index) tumor += post::classify(roi.candidates[i].f, t) == CellClass::tumor;
  return static_cast<double>(tumor) / static_cast<double>(s.index.size());
}

}  // namespace

RoiEvaluation evaluate_roi(const EvalRoi& roi, const post::Thresholds& t, double radius_um) {
  const auto sel = select(roi, t.t_d);
  const auto labels = label_points(roi);
  const auto match = greedy_match(sel.points, labels, roi.mpp, radius_um);
  RoiEvaluation r;
  r.detection = detection_metrics(match);
  std::vector<CellClass> predicted, truth;
  for (const auto& m : match.pairs) {
    predicted.push_back(post::classify(roi.candidates[sel.index[m.detection]].f, t));
    truth.push_back(roi.labels[m.label].cls);
  }
  r.classification = classification_metrics(predicted, truth);
  r.predicted_tcr = predicted_ratio(roi, sel, t);
  r.true_tcr = true_ratio(roi);
  return r;
}

EvalReport evaluate(std::span<const EvalRoi> rois, const post::Thresholds& t, double radius_um) {
  EvalReport report;
  std::int64_t tp = 0, fp = 0, fn = 0, ctp = 0, cfp = 0, ctn = 0, cfn = 0;
  std::vector<double> pred, truth;
  for (const auto& roi : rois) {
    auto r = evaluate_roi(roi, t, radius_um);
    tp += r.detection.tp;
    fp += r.detection.fp;
    fn += r.detection.fn;
    ctp += r.classification.tp;
    cfp += r.classification.fp;
    ctn += r.classification.tn;
    cfn += r.classification.fn;
    pred.push_back(r.predicted_tcr);
    truth.push_back(r.true_tcr);
    report.rois.push_back(r);
  }
  report.detection = detection_metrics(tp, fp, fn);
  report.classification = classification_metrics(ctp, cfp, ctn, cfn);
  report.e_tcr = tcr_error(pred, truth);
  return report;
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json rois = nlohmann::json::array();
  for (const auto& roi : r.rois) {
    rois.push_back({{"detection", to_json(roi.detection)},
                    {"classification", to_json(roi.classification)},
                    {"predicted_tcr", roi.predicted_tcr},
                    {"true_tcr", roi.true_tcr}});
  }
  return {{"detection", to_json(r.detection)},
          {"classification", to_json(r.classification)},
          {"e_tcr", r.e_tcr},
          {"rois", rois}};
}

TuneResult tune_thresholds(std::span<const EvalRoi> rois, const TuneOptions& options) {
  if (rois.empty()) throw std::invalid_argument("tune_thresholds: empty evaluation set");
  if (options.grid.empty()) throw std::invalid_argument("tune_thresholds: empty grid");
  std::vector<std::vector<Point>> labels;
  for (const auto& roi : rois) labels.push_back(label_points(roi));

  TuneResult result;
  result.thresholds.alpha = options.alpha;
  double best_f1 = -1.0;
  for (double t_d : options.grid) {
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < rois.size(); ++i) {
      const auto sel = select(rois[i], t_d);
      const auto m = greedy_match(sel.points, labels[i], rois[i].mpp, options.radius_um);
      tp += static_cast<std::int64_t>(m.pairs.size());
      fp += static_cast<std::int64_t>(m.unmatched_detections.size());
      fn += static_cast<std::int64_t>(m.unmatched_labels.size());
    }
    const double f1 = detection_metrics(tp, fp, fn).f1;
    result.stage1.push_back({t_d, f1});
    if (f1 > best_f1) {
      best_f1 = f1;
      result.thresholds.t_d = t_d;
    }
  }
  result.detection_f1 = best_f1;

  std::vector<Selection> selections;
  std::vector<double> truth;
  for (const auto& roi : rois) {
    selections.push_back(select(roi, result.thresholds.t_d));
    truth.push_back(true_ratio(roi));
  }
  auto e_tcr_at = [&](const std::vector<Selection>& sel, double t_d, double t_c) {
    const post::Thresholds t{t_d, t_c, options.alpha};
    std::vector<double> pred;
    for (std::size_t i = 0; i < rois.size(); ++i) pred.push_back(predicted_ratio(rois[i], sel[i], t));
    return tcr_error(pred, truth);
  };
  double best_err = INFINITY;
  for (double t_c : options.grid) {
    const double err = e_tcr_at(selections, result.thresholds.t_d, t_c);
    result.stage2.push_back({t_c, err});
    if (err < best_err) {
      best_err = err;
      result.thresholds.t_c = t_c;
    }
  }
  result.e_tcr = best_err;

  if (options.joint) {
    JointResult joint{0.0, 0.0, INFINITY};
    for (double t_d : options.grid) {
      std::vector<Selection> sel;
      for (const auto& roi : rois) sel.push_back(select(roi, t_d));
      for (double t_c : options.grid) {
        const double err = e_tcr_at(sel, t_d, t_c);
        if (err < joint.e_tcr) joint = {t_d, t_c, err};
      }
    }
    result.joint = joint;
  }
  return result;
}

nlohmann::json to_json(const TuneResult& r) {
  auto curve = [](const std::vector<GridValue>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& g : v) a.push_back({g.t, g.value});
    return a;
  };
  nlohmann::json j = {{"t_d", r.thresholds.t_d},       {"t_c", r.thresholds.t_c},
                      {"alpha", r.thresholds.alpha},   {"detection_f1", r.detection_f1},
                      {"e_tcr", r.e_tcr},              {"stage1_f1", curve(r.stage1)},
                      {"stage2_e_tcr", curve(r.stage2)}};
  if (r.joint) j["joint"] = {{"t_d", r.joint->t_d}, {"t_c", r.joint->t_c}, {"e_tcr", r.joint->e_tcr}};
  return j;
}

}  // namespace tcr::eval
