#include "tcr/pipeline/pipeline.hpp"

#include <cblas.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <thread>

#include "tcr/io.hpp"
#include "tcr/model/weights_io.hpp"
#include "tcr/scale.hpp"

namespace tcr::pipeline {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::int64_t floor_to(std::int64_t v, std::int64_t a) { return (v >= 0 ? v / a : -((-v + a - 1) / a)) * a; }
std::int64_t ceil_to(std::int64_t v, std::int64_t a) { return -floor_to(-v, a); }

Rect expand(const Rect& r, std::int64_t by, const Rect& bounds) {
  return Rect{r.x - by, r.y - by, r.w + 2 * by, r.h + 2 * by}.intersect(bounds);
}

/// Level-0 halo for a model: the configured halo, but never below half the
/// model's output receptive field.
std::int64_t halo_level0(const ModelSpec& spec, std::int64_t halo_px, double factor) {
  const auto needed = std::max<std::int64_t>(halo_px, (model::output_receptive_field(spec.model->config()) + 1) / 2);
  return static_cast<std::int64_t>(std::ceil(static_cast<double>(needed) / factor));
}

}  // namespace

std::vector<TileJob> plan_tiles(const Rect& region, std::int64_t interior_size, std::int64_t halo, const Rect& bounds) {
  if (interior_size <= 0) throw std::invalid_argument("interior size must be positive");
  if (halo < 0) throw std::invalid_argument("halo must be non-negative");
  if (region.empty() || !bounds.contains(region)) {
    throw std::out_of_range("region " + region.str() + " is not inside the slide " + bounds.str());
  }
  std::vector<TileJob> jobs;
  for (std::int64_t y = region.y; y < region.bottom(); y += interior_size) {
    for (std::int64_t x = region.x; x < region.right(); x += interior_size) {
      const Rect interior{x, y, std::min(interior_size, region.right() - x), std::min(interior_size, region.bottom() - y)};
      jobs.push_back({static_cast<int>(jobs.size()), interior, expand(interior, halo, bounds)});
    }
  }
  return jobs;
}

HeatmapGrid build_heatmap(std::span<const post::CellRecord> cells, const Rect& region, double mpp, double cell_side_um) {
  if (!(cell_side_um > 0.0) || !(mpp > 0.0)) throw std::invalid_argument("heatmap needs positive cell side and mpp");
  HeatmapGrid g;
  g.origin_x = region.x;
  g.origin_y = region.y;
  g.side_um = cell_side_um;
  g.side_px = cell_side_um / mpp;
  g.cols = std::max(1, static_cast<int>(std::ceil(static_cast<double>(region.w) / g.side_px)));
  g.rows = std::max(1, static_cast<int>(std::ceil(static_cast<double>(region.h) / g.side_px)));
  g.cells.resize(static_cast<std::size_t>(g.cols) * g.rows);
  for (const auto& c : cells) {
    const int cx = std::clamp(static_cast<int>(std::floor(static_cast<double>(c.x - region.x) / g.side_px)), 0, g.cols - 1);
    const int cy = std::clamp(static_cast<int>(std::floor(static_cast<double>(c.y - region.y) / g.side_px)), 0, g.rows - 1);
    auto& cell = g.cells[static_cast<std::size_t>(cy) * g.cols + cx];
    ++cell.n;
    cell.n_tumor += c.cls == CellClass::tumor;
  }
  for (auto& cell : g.cells) {
    cell.empty = cell.n == 0;
    cell.tcr = cell.empty ? 0.0 : static_cast<double>(cell.n_tumor) / static_cast<double>(cell.n);
  }
  return g;
}

nlohmann::json to_json(const HeatmapGrid& g) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : g.cells) cells.push_back({{"n", c.n}, {"n_tumor", c.n_tumor}, {"tcr", c.tcr}, {"empty", c.empty}});
  return {{"origin", {g.origin_x, g.origin_y}}, {"cell_um", g.side_um}, {"cell_px", g.side_px},
          {"cols", g.cols}, {"rows", g.rows}, {"cells", cells}};
}

void StageTiming::merge(const StageTiming& o) {
  for (int i = 0; i < kStageCount; ++i) seconds[static_cast<std::size_t>(i)] += o.seconds[static_cast<std::size_t>(i)];
}

double StageTiming::share(Stage s) const {
  const double budget = wall_seconds * std::max(1, workers);
  return budget > 0.0 ? seconds[static_cast<std::size_t>(s)] / budget : 0.0;
}

nlohmann::json to_json(const StageTiming& t) {
  nlohmann::json stages = nlohmann::json::array();
  double total_share = 0.0;
  for (int i = 0; i < kStageCount; ++i) {
    const double share = t.share(static_cast<Stage>(i));
    total_share += share;
    stages.push_back({{"stage", kStageNames[i]}, {"seconds", t.seconds[static_cast<std::size_t>(i)]}, {"share", share}});
  }
  return {{"stages", stages}, {"other_share", std::max(0.0, 1.0 - total_share)}, {"wall_seconds", t.wall_seconds},
          {"workers", t.workers}};
}

PipelineConfig load_pipeline_config(const nlohmann::json& j, const std::filesystem::path& base_dir, StageTiming* timing) {
  const auto t0 = Clock::now();
  PipelineConfig c;
  auto load = [&](const nlohmann::json& m, int maps) {
    std::filesystem::path path = m.at("weights").get<std::string>();
    if (path.is_relative()) path = base_dir / path;
    c.weight_files.push_back(path);
    return ModelSpec{std::make_shared<const model::UNet>(model::load_weights(path, maps)), m.at("magnification").get<double>()};
  };
  try {
    c.detect_classify = load(j.at("dtcl"), 2);
    if (j.contains("seg") && !j.at("seg").is_null()) c.segment = load(j.at("seg"), 1);
    if (j.contains("thresholds")) {
      const auto& t = j.at("thresholds");
      c.thresholds = {t.value("t_d", 0.5), t.value("t_c", 0.5), t.value("alpha", 0.5)};
    }
    c.halo = j.value("halo", c.halo);
    c.interior = j.value("interior", c.interior);
    c.heatmap_um = j.value("heatmap_um", c.heatmap_um);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("pipeline config: ") + e.what());
  }
  c.thresholds.validate();
  if (c.halo < 0 || c.interior <= 0 || !(c.heatmap_um > 0.0)) throw std::invalid_argument("pipeline config: bad halo, interior or heatmap size");
  if (timing) timing->add(Stage::model_setup, seconds_since(t0));
  return c;
}

TileGeometry tile_geometry(const slide::SlidePyramid& slide, const Rect& level0, double magnification, int levels) {
  TileGeometry g;
  g.factor = read_factor(slide.mpp(), magnification);
  if (g.factor > 1.0) throw std::invalid_argument("slide cannot be read at " + std::to_string(magnification) + "X");
  const std::int64_t a = std::int64_t{1} << levels;
  const double f = g.factor;
  const auto x0 = floor_to(static_cast<std::int64_t>(std::floor(static_cast<double>(level0.x) * f)), a);
  const auto y0 = floor_to(static_cast<std::int64_t>(std::floor(static_cast<double>(level0.y) * f)), a);
  const auto x1 = ceil_to(static_cast<std::int64_t>(std::ceil(static_cast<double>(level0.right()) * f)), a);
  const auto y1 = ceil_to(static_cast<std::int64_t>(std::ceil(static_cast<double>(level0.bottom()) * f)), a);
  g.raster = Rect{x0, y0, x1 - x0, y1 - y0}.intersect(slide.raster_extent(f));
  return g;
}

TileGeometry tile_geometry(const slide::SlidePyramid& slide, const TileJob& job, double magnification, int levels) {
  return tile_geometry(slide, job.padded, magnification, levels);
}

TileResult run_tile(const TileJob& job, const slide::SlidePyramid& slide, const PipelineConfig& config) {
  TileResult out;
  const auto& dc = config.detect_classify;
  const Rect bounds{0, 0, slide.width(), slide.height()};
  const auto gd = tile_geometry(slide, job, dc.magnification, dc.model->config().levels);
  if (gd.raster.w < dc.model->config().min_input_size() || gd.raster.h < dc.model->config().min_input_size()) {
    throw std::runtime_error("tile " + std::to_string(job.index) + " is too small at " +
                             std::to_string(dc.magnification) + "X");
  }

  auto t0 = Clock::now();
  const auto image_d = slide.read_raster(gd.raster, gd.factor);
  out.timing.add(Stage::read_pixels, seconds_since(t0));
  t0 = Clock::now();
  const auto maps = dc.model->forward_maps(image_d);
  out.timing.add(Stage::model_inference, seconds_since(t0));

  std::optional<DensityMap> map_s;
  post::ScaleTransform to_s;
  if (config.segment) {
    const auto& sg = *config.segment;
    const auto halo_s = std::max(halo_level0(dc, config.halo, gd.factor),
                                 halo_level0(sg, 0, read_factor(slide.mpp(), sg.magnification)));
    const auto gs = tile_geometry(slide, expand(job.interior, halo_s, bounds), sg.magnification, sg.model->config().levels);
    t0 = Clock::now();
    const auto image_s = slide.read_raster(gs.raster, gs.factor);
    out.timing.add(Stage::read_pixels, seconds_since(t0));
    t0 = Clock::now();
    map_s = sg.model->forward_maps(image_s).front();
    out.timing.add(Stage::model_inference, seconds_since(t0));
    to_s.ratio = gs.factor / gd.factor;
    to_s.offset_x = static_cast<double>(gd.raster.x) * to_s.ratio - static_cast<double>(gs.raster.x);
    to_s.offset_y = static_cast<double>(gd.raster.y) * to_s.ratio - static_cast<double>(gs.raster.y);
  }

  t0 = Clock::now();
  const auto peaks = post::detect_peaks(maps[0], config.thresholds.t_d);
  const Resampling global{0, 0, gd.factor};
  std::vector<post::Peak> owned;
  std::vector<std::pair<std::int64_t, std::int64_t>> positions;
  for (const auto& p : peaks) {
    const auto x = global.to_level0_x(gd.raster.x + p.x), y = global.to_level0_y(gd.raster.y + p.y);
    if (!job.interior.contains(x, y)) continue;
    owned.push_back(p);
    positions.emplace_back(x, y);
  }
  const auto features = post::sample_scores(owned, maps[1], map_s ? &*map_s : nullptr, to_s);
  for (std::size_t i = 0; i < owned.size(); ++i) {
    post::CellRecord c;
    c.x = positions[i].first;
    c.y = positions[i].second;
    c.f = features[i];
    c.tile = job.index;
    out.cells.push_back(c);
  }
  post::classify_all(out.cells, config.thresholds);
  out.timing.add(Stage::peak_detect, seconds_since(t0));
  return out;
}

PipelineResult run_pipeline(const slide::SlidePyramid& slide, const Rect& region, const PipelineConfig& config, int workers,
                            const ProgressFn& progress) {
  if (workers < 1) throw std::invalid_argument("workers must be >= 1");
  if (!config.detect_classify.model) throw std::invalid_argument("pipeline needs a detection/classification model");
  config.thresholds.validate();
  const auto start = Clock::now();
  const Rect bounds{0, 0, slide.width(), slide.height()};
  const double fd = read_factor(slide.mpp(), config.detect_classify.magnification);
  const auto halo = halo_level0(config.detect_classify, config.halo, fd);
  const auto interior = std::max<std::int64_t>(1, std::llround(static_cast<double>(config.interior) / fd));
  const auto jobs = plan_tiles(region, interior, halo, bounds);

  openblas_set_num_threads(1);  // parallelism comes from tiles
  std::vector<std::optional<TileResult>> results(jobs.size());
  std::vector<TileFailure> failures;
  std::mutex failure_mutex, progress_mutex;
  int done = 0;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        results[i] = run_tile(jobs[i], slide, config);
      } catch (const std::exception& e) {
        std::lock_guard lock(failure_mutex);
        failures.push_back({jobs[i].index, e.what()});
      }
      if (progress) {
        std::lock_guard lock(progress_mutex);
        progress(++done, static_cast<int>(jobs.size()));
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (int w = 1; w < std::min<int>(workers, static_cast<int>(jobs.size())); ++w) pool.emplace_back(worker);
    worker();
  }
  const double run_seconds = seconds_since(start);

  PipelineResult r;
  r.tiles = static_cast<int>(jobs.size());
  for (auto& res : results) {
    if (!res) continue;
    r.timing.merge(res->timing);
    r.cells.insert(r.cells.end(), res->cells.begin(), res->cells.end());
  }
  std::sort(r.cells.begin(), r.cells.end(), [](const auto& a, const auto& b) { return std::tie(a.y, a.x) < std::tie(b.y, b.x); });
  std::sort(failures.begin(), failures.end(), [](const auto& a, const auto& b) { return a.tile < b.tile; });
  r.failures = std::move(failures);
  r.tcr = post::compute_tcr(r.cells);
  r.heatmap = build_heatmap(r.cells, region, slide.mpp(), config.heatmap_um);
  r.area_mm2 = static_cast<double>(region.w) * static_cast<double>(region.h) * slide.mpp() * slide.mpp() * 1e-6;
  r.throughput_mm2_s = run_seconds > 0.0 ? r.area_mm2 / run_seconds : 0.0;
  r.timing.workers = workers;
  r.timing.wall_seconds = run_seconds;
  return r;
}

nlohmann::json to_json(const PipelineResult& r, bool include_timing) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) cells.push_back(post::to_json(c));
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& f : r.failures) failures.push_back({{"tile", f.tile}, {"error", f.message}});
  nlohmann::json j = {{"overall_tcr", r.tcr.ratio},
                      {"n_cells", r.tcr.n},
                      {"n_tumor", r.tcr.n_tumor},
                      {"cells", cells},
                      {"heatmap", to_json(r.heatmap)},
                      {"tiles", r.tiles},
                      {"area_mm2", r.area_mm2},
                      {"failures", failures},
                      {"partial", r.partial()}};
  if (include_timing) {
    j["timing"] = to_json(r.timing);
    j["throughput_mm2_s"] = r.throughput_mm2_s;
  }
  return j;
}

void save_result(PipelineResult& r, const std::filesystem::path& path) {
  const auto t0 = Clock::now();
  write_file_atomic(path, to_json(r).dump());
  const double dt = seconds_since(t0);
  r.timing.add(Stage::save_result, dt);
  r.timing.wall_seconds += dt;
  // Rewrite so the saved timing includes the save itself.
  write_file_atomic(path, to_json(r).dump());
}

}  // namespace tcr::pipeline
