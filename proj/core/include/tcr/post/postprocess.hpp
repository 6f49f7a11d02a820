#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tcr/annotations.hpp"
#include "tcr/image.hpp"

namespace tcr::post {

struct Peak {
  int x = 0;
  int y = 0;
  float value = 0.0f;

  friend bool operator==(const Peak&, const Peak&) = default;
};

/// Local maxima of a 3x3 neighborhood: p is a peak iff map[p] >= every
/// in-bounds neighbor and map[p] > every neighbor preceding it in row-major
/// order (one peak per plateau). Peaks below t_d are dropped. Row-major output.
std::vector<Peak> detect_peaks(const DensityMap& map_d, double t_d);

struct Thresholds {
  double t_d = 0.5;
  double t_c = 0.5;
  double alpha = 0.5;

  void validate() const;
  friend bool operator==(const Thresholds&, const Thresholds&) = default;
};

/// f = [I_d, I_c, I_s].
struct Features {
  double i_d = 0.0;
  double i_c = 0.0;
  double i_s = 0.0;
};

/// Bilinear sample at pixel-index coordinates; coordinates outside the map
/// are clamped to the border and reported through `clamped`.
double bilinear(const DensityMap& map, double x, double y, bool* clamped = nullptr);

/// Maps map_d pixel indices to map_s pixel indices: s = d * ratio + offset.
struct ScaleTransform {
  double ratio = 1.0;
  double offset_x = 0.0;
  double offset_y = 0.0;
};

struct SampleStats {
  int clamped = 0;
};

/// I_c read at the peak pixel of map_c (same grid as map_d); I_s bilinearly
/// sampled from map_s, or I_s = I_c when map_s is absent.
std::vector<Features> sample_scores(std::span<const Peak> peaks, const DensityMap& map_c,
                                    const DensityMap* map_s, const ScaleTransform& to_s,
                                    SampleStats* stats = nullptr);

/// alpha * I_c + (1 - alpha) * I_s.
double fused_score(const Features& f, double alpha);
/// Tumor iff the fused score is strictly greater than t_c.
CellClass classify(const Features& f, const Thresholds& t);

struct CellRecord {
  std::int64_t x = 0;  ///< level-0 pixels
  std::int64_t y = 0;
  Features f;
  double score = 0.0;
  CellClass cls = CellClass::normal;
  int tile = -1;

  friend bool operator==(const CellRecord& a, const CellRecord& b) {
    return a.x == b.x && a.y == b.y && a.f.i_d == b.f.i_d && a.f.i_c == b.f.i_c &&
           a.f.i_s == b.f.i_s && a.score == b.score && a.cls == b.cls;
  }
};

/// Labels every cell from its stored features.
void classify_all(std::span<CellRecord> cells, const Thresholds& t);

struct TcrResult {
  double ratio = 0.0;
  std::int64_t n = 0;
  std::int64_t n_tumor = 0;
  bool empty = true;
};

TcrResult compute_tcr(std::span<const CellRecord> cells);

/// {x, y, I_d, I_c, I_s, score, class}.
nlohmann::json to_json(const CellRecord& c);
CellRecord cell_from_json(const nlohmann::json& j);

}  // namespace tcr::post
