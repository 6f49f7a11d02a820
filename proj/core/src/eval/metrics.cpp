#include "tcr/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <tuple>
#include <unordered_map>

namespace tcr::eval {

MatchResult greedy_match(std::span<const Point> detections, std::span<const Point> labels,
                         double mpp, double radius_um) {
  if (!(mpp > 0.0)) throw std::invalid_argument("greedy_match needs a positive mpp");
  const double radius_px = radius_um / mpp;
  const std::int64_t cell = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(radius_px)));
  auto key = [](std::int64_t cx, std::int64_t cy) { return (cx << 32) ^ (cy & 0xffffffff); };
  auto floor_div = [](std::int64_t a, std::int64_t b) { return a >= 0 ? a / b : -((-a + b - 1) / b); };

  std::unordered_map<std::int64_t, std::vector<std::size_t>> grid;
  for (std::size_t l = 0; l < labels.size(); ++l) {
    grid[key(floor_div(labels[l].x, cell), floor_div(labels[l].y, cell))].push_back(l);
  }
  struct Candidate {
    double distance;
    std::size_t d, l;
  };
  std::vector<Candidate> candidates;
  for (std::size_t d = 0; d < detections.size(); ++d) {
    const auto cx = floor_div(detections[d].x, cell);
    const auto cy = floor_div(detections[d].y, cell);
    for (std::int64_t gy = cy - 1; gy <= cy + 1; ++gy)
      for (std::int64_t gx = cx - 1; gx <= cx + 1; ++gx) {
        const auto it = grid.find(key(gx, gy));
        if (it == grid.end()) continue;
        for (std::size_t l : it->second) {
          const double dx = static_cast<double>(detections[d].x - labels[l].x);
          const double dy = static_cast<double>(detections[d].y - labels[l].y);
          const double dist = std::sqrt(dx * dx + dy * dy) * mpp;
          if (dist <= radius_um) candidates.push_back({dist, d, l});
        }
      }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    return std::tie(a.distance, a.d, a.l) < std::tie(b.distance, b.d, b.l);
  });
  MatchResult r;
  std::vector<bool> det_used(detections.size()), label_used(labels.size());
  for (const auto& c : candidates) {
    if (det_used[c.d] || label_used[c.l]) continue;
    det_used[c.d] = true;
    label_used[c.l] = true;
    r.pairs.push_back({c.d, c.l, c.distance});
  }
  for (std::size_t d = 0; d < detections.size(); ++d) {
    if (!det_used[d]) r.unmatched_detections.push_back(d);
  }
  for (std::size_t l = 0; l < labels.size(); ++l) {
    if (!label_used[l]) r.unmatched_labels.push_back(l);
  }
  return r;
}

namespace {

double ratio(std::int64_t num, std::int64_t den, bool& degenerate) {
  if (den == 0) {
    degenerate = true;
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

double harmonic(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

}  // namespace

DetectionMetrics detection_metrics(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
  DetectionMetrics m;
  m.tp = tp;
  m.fp = fp;
  m.fn = fn;
  m.accuracy = ratio(tp, tp + fp + fn, m.degenerate);
  m.precision = ratio(tp, tp + fp, m.degenerate);
  m.recall = ratio(tp, tp + fn, m.degenerate);
  m.f1 = harmonic(m.precision, m.recall);
  return m;
}

DetectionMetrics detection_metrics(const MatchResult& r) {
  return detection_metrics(static_cast<std::int64_t>(r.pairs.size()),
                           static_cast<std::int64_t>(r.unmatched_detections.size()),
                           static_cast<std::int64_t>(r.unmatched_labels.size()));
}

ClassificationMetrics classification_metrics(std::int64_t tp, std::int64_t fp, std::int64_t tn,
                                             std::int64_t fn) {
  ClassificationMetrics m;
  m.tp = tp;
  m.fp = fp;
  m.tn = tn;
  m.fn = fn;
  m.accuracy = ratio(tp + tn, tp + tn + fp + fn, m.degenerate);
  m.precision_pos = ratio(tp, tp + fp, m.degenerate);
  m.recall_pos = ratio(tp, tp + fn, m.degenerate);
  m.precision_neg = ratio(tn, tn + fn, m.degenerate);
  m.recall_neg = ratio(tn, tn + fp, m.degenerate);
  m.precision = (m.precision_pos + m.precision_neg) / 2.0;
  m.recall = (m.recall_pos + m.recall_neg) / 2.0;
  m.f1 = harmonic(m.precision, m.recall);
  return m;
}

ClassificationMetrics classification_metrics(std::span<const CellClass> predicted,
                                             std::span<const CellClass> truth) {
  if (predicted.size() != truth.size()) {
    throw std::invalid_argument("classification_metrics: length mismatch");
  }
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool p = predicted[i] == CellClass::tumor;
    const bool t = truth[i] == CellClass::tumor;
    tp += p && t;
    fp += p && !t;
    tn += !p && !t;
    fn += !p && t;
  }
  return classification_metrics(tp, fp, tn, fn);
}

double tcr_error(std::span<const double> predicted, std::span<const double> truth) {
  if (predicted.size() != truth.size()) {
    throw std::invalid_argument("tcr_error: " + std::to_string(predicted.size()) +
                                " predictions for " + std::to_string(truth.size()) + " ROIs");
  }
  if (predicted.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) sum += std::abs(predicted[i] - truth[i]);
  return sum / static_cast<double>(predicted.size());
}

nlohmann::json to_json(const DetectionMetrics& m) {
  return {{"tp", m.tp},           {"fp", m.fp},       {"fn", m.fn},
          {"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall},
          {"f1", m.f1},           {"degenerate", m.degenerate}};
}

nlohmann::json to_json(const ClassificationMetrics& m) {
  return {{"tp", m.tp},
          {"fp", m.fp},
          {"tn", m.tn},
          {"fn", m.fn},
          {"accuracy", m.accuracy},
          {"precision_pos", m.precision_pos},
          {"recall_pos", m.recall_pos},
          {"precision_neg", m.precision_neg},
          {"recall_neg", m.recall_neg},
          {"precision", m.precision},
          {"recall", m.recall},
          {"f1", m.f1},
          {"degenerate", m.degenerate}};
}

}  // namespace tcr::eval
