#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tcr/image.hpp"
#include "tcr/model/unet.hpp"
#include "tcr/post/postprocess.hpp"
#include "tcr/slide/pyramid.hpp"

namespace tcr::pipeline {

struct TileJob {
  int index = 0;
  Rect interior;  ///< level-0
  Rect padded;    ///< interior + halo, clipped to the slide
};

/// Row-major grid of `interior_size` interiors over `region` (level-0
/// pixels), each padded by `halo` and clipped to `bounds`.
std::vector<TileJob> plan_tiles(const Rect& region, std::int64_t interior_size, std::int64_t halo,
                                const Rect& bounds);

struct HeatmapCell {
  std::int64_t n = 0;
  std::int64_t n_tumor = 0;
  double tcr = 0.0;
  bool empty = true;
};

struct HeatmapGrid {
  std::int64_t origin_x = 0;  ///< level-0
  std::int64_t origin_y = 0;
  double side_um = 128.0;
  double side_px = 0.0;  ///< level-0 pixels
  int cols = 0;
  int rows = 0;
  std::vector<HeatmapCell> cells;  ///< row-major
};

HeatmapGrid build_heatmap(std::span<const post::CellRecord> cells, const Rect& region, double mpp,
                          double cell_side_um = 128.0);
nlohmann::json to_json(const HeatmapGrid& g);

inline constexpr const char* kStageNames[] = {"read pixels", "model inference", "save result", "peak detect",
                                              "model setup"};
enum class Stage { read_pixels, model_inference, save_result, peak_detect, model_setup };
inline constexpr int kStageCount = 5;

struct StageTiming {
  std::array<double, kStageCount> seconds{};
  double wall_seconds = 0.0;
  int workers = 1;

  void add(Stage s, double sec) { seconds[static_cast<std::size_t>(s)] += sec; }
  void merge(const StageTiming& o);
  /// Stage time over workers x wall time.
  [[nodiscard]] double share(Stage s) const;
};
nlohmann::json to_json(const StageTiming& t);

/// A model and the magnification it runs at.
struct ModelSpec {
  std::shared_ptr<const model::UNet> model;
  double magnification = 20.0;
};

struct PipelineConfig {
  ModelSpec detect_classify;                 ///< two output maps
  std::optional<ModelSpec> segment;          ///< one output map
  post::Thresholds thresholds;
  std::int64_t halo = 94;                    ///< pixels at the detection magnification
  std::int64_t interior = 512;               ///< pixels at the detection magnification
  double heatmap_um = 128.0;
  std::vector<std::filesystem::path> weight_files;  ///< informational, echoed in output
};

/// JSON config: {"dtcl": {"weights", "magnification"}, "seg": {...}?,
/// "thresholds": {"t_d", "t_c", "alpha"}, "halo", "interior", "heatmap_um"}.
/// Weight paths resolve relative to `base_dir`. Times weight loading.
PipelineConfig load_pipeline_config(const nlohmann::json& j, const std::filesystem::path& base_dir,
                                    StageTiming* timing = nullptr);

struct TileResult {
  std::vector<post::CellRecord> cells;
  StageTiming timing;
};

struct TileGeometry {
  Rect raster;  ///< processing-raster window actually read
  double factor = 1.0;
};

/// Processing-raster window covering `padded`, widened to multiples of the
/// model's pooling stride and clipped to the slide raster.
TileGeometry tile_geometry(const slide::SlidePyramid& slide, const TileJob& job, double magnification,
                           int levels);
TileGeometry tile_geometry(const slide::SlidePyramid& slide, const Rect& level0, double magnification,
                           int levels);

TileResult run_tile(const TileJob& job, const slide::SlidePyramid& slide, const PipelineConfig& config);

struct TileFailure {
  int tile = 0;
  std::string message;
};

struct PipelineResult {
  std::vector<post::CellRecord> cells;  ///< sorted by (y, x)
  post::TcrResult tcr;
  HeatmapGrid heatmap;
  StageTiming timing;
  double area_mm2 = 0.0;
  double throughput_mm2_s = 0.0;
  std::vector<TileFailure> failures;
  int tiles = 0;
  [[nodiscard]] bool partial() const { return !failures.empty(); }
};

/// Called after each finished tile with (tiles done, total); calls are
/// serialized and `done` increases by one each time.
using ProgressFn = std::function<void(int done, int total)>;

/// Runs every tile on `workers` threads. Output is independent of worker count
/// and completion order.
PipelineResult run_pipeline(const slide::SlidePyramid& slide, const Rect& region, const PipelineConfig& config,
                            int workers, const ProgressFn& progress = {});

/// {overall_tcr, n_cells, n_tumor, cells, heatmap, timing, throughput_mm2_s, ...}.
nlohmann::json to_json(const PipelineResult& r, bool include_timing = true);

/// Serializes and writes the result, timing the write as "save result".
void save_result(PipelineResult& r, const std::filesystem::path& path);

}  // namespace tcr::pipeline
