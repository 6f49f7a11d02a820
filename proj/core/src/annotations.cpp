#include "tcr/annotations.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace tcr {

const char* to_string(CellClass c) { return c == CellClass::tumor ? "tumor" : "normal"; }

CellClass cell_class_from(const std::string& name) {
  if (name == "tumor") return CellClass::tumor;
  if (name == "normal") return CellClass::normal;
  throw std::invalid_argument("unknown cell class '" + name + "'");
}

nlohmann::json to_json(const Annotations& a) {
  nlohmann::json j;
  j["mpp"] = a.mpp;
  auto& points = j["points"] = nlohmann::json::array();
  for (const auto& p : a.points) points.push_back({{"x", p.x}, {"y", p.y}, {"class", to_string(p.cls)}});
  auto& polygons = j["polygons"] = nlohmann::json::array();
  for (const auto& poly : a.polygons) {
    auto verts = nlohmann::json::array();
    for (const auto& [x, y] : poly.vertices) verts.push_back({x, y});
    polygons.push_back(std::move(verts));
  }
  auto& rois = j["rois"] = nlohmann::json::array();
  for (const auto& r : a.rois) rois.push_back({r.x, r.y, r.w, r.h});
  return j;
}

Annotations annotations_from_json(const nlohmann::json& j) {
  Annotations a;
  a.mpp = j.at("mpp").get<double>();
  if (!(a.mpp > 0.0)) throw std::invalid_argument("annotation mpp must be positive");
  for (const auto& p : j.value("points", nlohmann::json::array())) {
    a.points.push_back({p.at("x").get<std::int64_t>(), p.at("y").get<std::int64_t>(),
                        cell_class_from(p.value("class", "normal"))});
  }
  for (const auto& poly : j.value("polygons", nlohmann::json::array())) {
    PolygonAnnotation out;
    for (const auto& v : poly) out.vertices.emplace_back(v.at(0).get<double>(), v.at(1).get<double>());
    a.polygons.push_back(std::move(out));
  }
  for (const auto& r : j.value("rois", nlohmann::json::array())) {
    a.rois.push_back({r.at(0).get<std::int64_t>(), r.at(1).get<std::int64_t>(),
                      r.at(2).get<std::int64_t>(), r.at(3).get<std::int64_t>()});
  }
  return a;
}

Annotations load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open annotations " + path.string());
  return annotations_from_json(nlohmann::json::parse(in));
}

void save_annotations(const Annotations& a, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write annotations " + path.string());
  out << to_json(a).dump() << '\n';
}

bool polygon_contains(const PolygonAnnotation& poly, double x, double y) {
  const auto& v = poly.vertices;
  if (v.size() < 3) return false;
  bool inside = false;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    const auto [xi, yi] = v[i];
    const auto [xj, yj] = v[j];
    if ((yi <= y) != (yj <= y)) {
      const double cross = xi + (y - yi) * (xj - xi) / (yj - yi);
      if (x < cross) inside = !inside;
    }
  }
  return inside;
}

std::vector<PointAnnotation> points_in(const std::vector<PointAnnotation>& points,
                                       const Rect& region) {
  std::vector<PointAnnotation> out;
  for (const auto& p : points) {
    if (region.contains(p.x, p.y)) out.push_back(p);
  }
  return out;
}

CellCounts count_cells(const std::vector<PointAnnotation>& points, const Rect& region) {
  CellCounts c;
  for (const auto& p : points) {
    if (!region.contains(p.x, p.y)) continue;
    ++c.total;
    if (p.cls == CellClass::tumor) ++c.tumor;
  }
  return c;
}

}  // namespace tcr
