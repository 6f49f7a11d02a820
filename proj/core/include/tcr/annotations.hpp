#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tcr/image.hpp"

namespace tcr {

enum class CellClass { normal, tumor };

const char* to_string(CellClass c);
CellClass cell_class_from(const std::string& name);

/// Nucleus center in level-0 pixels.
struct PointAnnotation {
  std::int64_t x = 0;
  std::int64_t y = 0;
  CellClass cls = CellClass::normal;

  friend bool operator==(const PointAnnotation&, const PointAnnotation&) = default;
};

/// Closed tumor-area trace; vertices are continuous level-0 coordinates.
struct PolygonAnnotation {
  std::vector<std::pair<double, double>> vertices;

  friend bool operator==(const PolygonAnnotation&, const PolygonAnnotation&) = default;
};

/// Per-slide annotation file: {mpp, points:[{x,y,class}], polygons:[[[x,y],...]],
/// rois:[[x,y,w,h],...]}. ROIs default to the whole slide when absent.
struct Annotations {
  double mpp = 0.0;
  std::vector<PointAnnotation> points;
  std::vector<PolygonAnnotation> polygons;
  std::vector<Rect> rois;

  friend bool operator==(const Annotations&, const Annotations&) = default;
};

nlohmann::json to_json(const Annotations& a);
Annotations annotations_from_json(const nlohmann::json& j);
Annotations load_annotations(const std::filesystem::path& path);
void save_annotations(const Annotations& a, const std::filesystem::path& path);

/// Even-odd point-in-polygon test at a continuous coordinate.
bool polygon_contains(const PolygonAnnotation& poly, double x, double y);

/// Points whose pixel lies inside `region`.
std::vector<PointAnnotation> points_in(const std::vector<PointAnnotation>& points,
                                       const Rect& region);

struct CellCounts {
  std::int64_t total = 0;
  std::int64_t tumor = 0;
  /// N_T / N, or 0 when empty.
  [[nodiscard]] double ratio() const {
    return total == 0 ? 0.0 : static_cast<double>(tumor) / static_cast<double>(total);
  }
};

CellCounts count_cells(const std::vector<PointAnnotation>& points, const Rect& region);

}  // namespace tcr
