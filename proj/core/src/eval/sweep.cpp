#include "tcr/eval/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace tcr::eval {

const char* to_string(SweepMode m) {
  switch (m) {
    case SweepMode::det: return "det";
    case SweepMode::cls: return "cls";
    case SweepMode::det_cls: return "det+cls";
  }
  return "?";
}

SweepMode sweep_mode_from(const std::string& name) {
  if (name == "det") return SweepMode::det;
  if (name == "cls") return SweepMode::cls;
  if (name == "det+cls" || name == "det_cls") return SweepMode::det_cls;
  throw std::invalid_argument("unknown sweep mode '" + name + "'");
}

MapSource model_source(std::shared_ptr<const model::UNet> model) {
  if (!model || model->config().out_maps != 2) throw std::invalid_argument("sweep needs a two-map model");
  const int levels = model->config().levels;
  return {[m = std::move(model)](const RgbImage& image, const Rect&, double) { return m->forward_maps(image); }, levels};
}

namespace {

struct RoiMaps {
  std::vector<DensityMap> maps;
  Resampling raster;  ///< global raster: origin 0, scale = factor
  Rect window;        ///< raster pixels read
};

RoiMaps read_maps(const SweepRoi& roi, const MapSource& src, double factor) {
  const std::int64_t a = std::int64_t{1} << src.levels;
  auto lo = [&](std::int64_t v) { return static_cast<std::int64_t>(std::floor(static_cast<double>(v) * factor)) / a * a; };
  auto hi = [&](std::int64_t v) {
    return (static_cast<std::int64_t>(std::ceil(static_cast<double>(v) * factor)) + a - 1) / a * a;
  };
  RoiMaps r;
  r.raster = Resampling{0, 0, factor};
  r.window = Rect{lo(roi.rect.x), lo(roi.rect.y), 0, 0};
  r.window.w = hi(roi.rect.right()) - r.window.x;
  r.window.h = hi(roi.rect.bottom()) - r.window.y;
  r.window = r.window.intersect(roi.slide->raster_extent(factor));
  const auto image = roi.slide->read_raster(r.window, factor);
  r.maps = src.maps(image, r.window, factor);
  if (r.maps.size() < 2) throw std::runtime_error("map source must return detection and classification maps");
  return r;
}

struct Tally {
  std::int64_t tp = 0, fp = 0, fn = 0;
  std::vector<CellClass> predicted, truth;
};

}  // namespace

std::vector<SweepPoint> magnification_sweep(const std::map<double, MapSource>& sources, std::span<const SweepRoi> rois,
                                            std::span<const SweepMode> modes, const post::Thresholds& thresholds,
                                            std::span<const double> factors, double radius_um) {
  thresholds.validate();
  if (rois.empty()) throw std::invalid_argument("sweep needs at least one ROI");
  std::vector<SweepPoint> out;
  for (const double factor : factors) {
    if (!(factor > 0.0) || factor > 1.0) throw std::invalid_argument("resize factor must be in (0, 1]");
    const auto it = std::find_if(sources.begin(), sources.end(),
                                 [&](const auto& kv) { return std::abs(kv.first - factor) < 1e-9; });
    if (it == sources.end()) {
      for (const auto mode : modes) out.push_back({factor, mode, true, {}, {}, 0.0});
      continue;
    }
    std::map<SweepMode, Tally> tallies;
    for (const auto& roi : rois) {
      const auto m = read_maps(roi, it->second, factor);
      const auto& map_d = m.maps[0];
      const auto& map_c = m.maps[1];
      std::vector<Point> labels;
      for (const auto& l : roi.labels) labels.push_back({l.x, l.y});

      std::vector<Point> detections;
      std::vector<CellClass> det_class;
      for (const auto& p : post::detect_peaks(map_d, thresholds.t_d)) {
        const Point q{m.raster.to_level0_x(m.window.x + p.x), m.raster.to_level0_y(m.window.y + p.y)};
        if (!roi.rect.contains(q.x, q.y)) continue;
        detections.push_back(q);
        const double ic = map_c.at(p.x, p.y);
        det_class.push_back(ic > thresholds.t_c ? CellClass::tumor : CellClass::normal);
      }
      const auto match = greedy_match(detections, labels, roi.slide->mpp(), radius_um);

      for (const auto mode : modes) {
        auto& t = tallies[mode];
        if (mode == SweepMode::det) {
          t.tp += static_cast<std::int64_t>(match.pairs.size());
          t.fp += static_cast<std::int64_t>(match.unmatched_detections.size());
          t.fn += static_cast<std::int64_t>(match.unmatched_labels.size());
        } else if (mode == SweepMode::det_cls) {
          std::int64_t correct = 0;
          for (const auto& pr : match.pairs) correct += det_class[pr.detection] == roi.labels[pr.label].cls;
          t.tp += correct;
          t.fp += static_cast<std::int64_t>(detections.size()) - correct;
          t.fn += static_cast<std::int64_t>(labels.size()) - correct;
        } else {
          for (const auto& l : roi.labels) {
            const double x = m.raster.to_raster(static_cast<double>(l.x) + 0.5, 0) - static_cast<double>(m.window.x) - 0.5;
            const double y = m.raster.to_raster(static_cast<double>(l.y) + 0.5, 0) - static_cast<double>(m.window.y) - 0.5;
            const double ic = post::bilinear(map_c, x, y);
            t.predicted.push_back(ic > thresholds.t_c ? CellClass::tumor : CellClass::normal);
            t.truth.push_back(l.cls);
          }
        }
      }
    }
    for (const auto mode : modes) {
      const auto& t = tallies[mode];
      SweepPoint p{factor, mode, false, {}, {}, 0.0};
      if (mode == SweepMode::cls) {
        p.classification = classification_metrics(t.predicted, t.truth);
        p.f1 = p.classification.f1;
      } else {
        p.counts = detection_metrics(t.tp, t.fp, t.fn);
        p.f1 = p.counts.f1;
      }
      out.push_back(p);
    }
  }
  return out;
}

std::string sweep_csv(std::span<const SweepPoint> points) {
  std::vector<double> factors;
  for (const auto& p : points)
    if (std::find(factors.begin(), factors.end(), p.factor) == factors.end()) factors.push_back(p.factor);
  std::string csv = "factor,det_f1,cls_f1,det_cls_f1,missing\n";
  char buf[64];
  for (const double f : factors) {
    std::snprintf(buf, sizeof buf, "%.4g", f);
    csv += buf;
    bool missing = false;
    for (const auto mode : {SweepMode::det, SweepMode::cls, SweepMode::det_cls}) {
      csv += ',';
      for (const auto& p : points) {
        if (p.factor != f || p.mode != mode) continue;
        missing = missing || p.missing;
        if (!p.missing) {
          std::snprintf(buf, sizeof buf, "%.9g", p.f1);
          csv += buf;
        }
      }
    }
    csv += missing ? ",1\n" : ",0\n";
  }
  return csv;
}

nlohmann::json to_json(std::span<const SweepPoint> points) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& p : points) {
    nlohmann::json j = {{"factor", p.factor}, {"mode", to_string(p.mode)}, {"missing", p.missing}};
    if (!p.missing) {
      j["f1"] = p.f1;
      j["metrics"] = p.mode == SweepMode::cls ? to_json(p.classification) : to_json(p.counts);
    }
    a.push_back(j);
  }
  return a;
}

}  // namespace tcr::eval
