#include "tcr/post/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace tcr::post {

std::vector<Peak> detect_peaks(const DensityMap& map_d, double t_d) {
  std::vector<Peak> peaks;
  const int w = map_d.width;
  const int h = map_d.height;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float v = map_d.at(x, y);
      if (v < t_d) continue;
      bool peak = true;
      for (int dy = -1; dy <= 1 && peak; ++dy) {
        const int ny = y + dy;
        if (ny < 0 || ny >= h) continue;
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx;
          if ((dx == 0 && dy == 0) || nx < 0 || nx >= w) continue;
          const float n = map_d.at(nx, ny);
          const bool precedes = dy < 0 || (dy == 0 && dx < 0);
          if (n > v || (precedes && n == v)) {
            peak = false;
            break;
          }
        }
      }
      if (peak) peaks.push_back({x, y, v});
    }
  }
  return peaks;
}

void Thresholds::validate() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(t_d) || !unit(t_c) || !unit(alpha)) {
    throw std::invalid_argument("thresholds t_d, t_c and alpha must lie in [0, 1]");
  }
}

double bilinear(const DensityMap& map, double x, double y, bool* clamped) {
  if (map.width <= 0 || map.height <= 0) throw std::invalid_argument("bilinear on empty map");
  const double cx = std::clamp(x, 0.0, static_cast<double>(map.width - 1));
  const double cy = std::clamp(y, 0.0, static_cast<double>(map.height - 1));
  if (clamped) *clamped = cx != x || cy != y;
  const int x0 = static_cast<int>(std::floor(cx));
  const int y0 = static_cast<int>(std::floor(cy));
  const int x1 = std::min(x0 + 1, map.width - 1);
  const int y1 = std::min(y0 + 1, map.height - 1);
  const double fx = cx - x0;
  const double fy = cy - y0;
  const double top = (1.0 - fx) * map.at(x0, y0) + fx * map.at(x1, y0);
  const double bottom = (1.0 - fx) * map.at(x0, y1) + fx * map.at(x1, y1);
  return (1.0 - fy) * top + fy * bottom;
}

std::vector<Features> sample_scores(std::span<const Peak> peaks, const DensityMap& map_c,
                                    const DensityMap* map_s, const ScaleTransform& to_s,
                                    SampleStats* stats) {
  std::vector<Features> out;
  out.reserve(peaks.size());
  for (const auto& p : peaks) {
    Features f;
    f.i_d = p.value;
    f.i_c = map_c.at(p.x, p.y);
    if (map_s) {
      bool clamped = false;
      f.i_s = bilinear(*map_s, p.x * to_s.ratio + to_s.offset_x, p.y * to_s.ratio + to_s.offset_y,
                       &clamped);
      if (clamped && stats) ++stats->clamped;
    } else {
      f.i_s = f.i_c;
    }
    out.push_back(f);
  }
  return out;
}

double fused_score(const Features& f, double alpha) { return alpha * f.i_c + (1.0 - alpha) * f.i_s; }

CellClass classify(const Features& f, const Thresholds& t) {
  return fused_score(f, t.alpha) > t.t_c ? CellClass::tumor : CellClass::normal;
}

void classify_all(std::span<CellRecord> cells, const Thresholds& t) {
  for (auto& c : cells) {
    c.score = fused_score(c.f, t.alpha);
    c.cls = c.score > t.t_c ? CellClass::tumor : CellClass::normal;
  }
}

TcrResult compute_tcr(std::span<const CellRecord> cells) {
  TcrResult r;
  r.n = static_cast<std::int64_t>(cells.size());
  for (const auto& c : cells) r.n_tumor += c.cls == CellClass::tumor;
  r.empty = r.n == 0;
  r.ratio = r.empty ? 0.0 : static_cast<double>(r.n_tumor) / static_cast<double>(r.n);
  return r;
}

nlohmann::json to_json(const CellRecord& c) {
  return {{"x", c.x},         {"y", c.y},         {"I_d", c.f.i_d},
          {"I_c", c.f.i_c},   {"I_s", c.f.i_s},   {"score", c.score},
          {"class", to_string(c.cls)}};
}

CellRecord cell_from_json(const nlohmann::json& j) {
  CellRecord c;
  c.x = j.at("x").get<std::int64_t>();
  c.y = j.at("y").get<std::int64_t>();
  c.f = {j.at("I_d").get<double>(), j.at("I_c").get<double>(), j.at("I_s").get<double>()};
  c.score = j.at("score").get<double>();
  c.cls = cell_class_from(j.at("class").get<std::string>());
  return c;
}

}  // namespace tcr::post
