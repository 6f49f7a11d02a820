#include "tcr/pipeline/dataset.hpp"

#include <algorithm>
#include <stdexcept>

namespace tcr::pipeline {

namespace fs = std::filesystem;

std::vector<SlideEntry> list_slides(const fs::path& data_dir) {
  if (!fs::is_directory(data_dir)) throw std::invalid_argument(data_dir.string() + " is not a directory");
  std::vector<SlideEntry> out;
  for (const auto& e : fs::directory_iterator(data_dir))
    if (e.is_directory() && fs::exists(e.path() / "manifest.json")) out.push_back({e.path().filename().string(), e.path()});
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

std::vector<SlideEntry> select_slides(const std::vector<SlideEntry>& all, const std::vector<std::string>& ids) {
  std::vector<SlideEntry> out;
  for (const auto& id : ids) {
    const auto it = std::find_if(all.begin(), all.end(), [&](const auto& s) { return s.id == id; });
    if (it == all.end()) throw std::invalid_argument("unknown slide '" + id + "'");
    out.push_back(*it);
  }
  return out;
}

eval::EvalRoi evaluation_roi(const slide::SlidePyramid& slide, const Rect& rect,
                             const std::vector<PointAnnotation>& points, const PipelineConfig& config, int workers) {
  auto all_peaks = config;
  all_peaks.thresholds.t_d = 0.0;
  const auto result = run_pipeline(slide, rect, all_peaks, workers);
  if (result.partial()) throw std::runtime_error("evaluation region " + rect.str() + ": " + result.failures.front().message);
  eval::EvalRoi roi;
  roi.mpp = slide.mpp();
  roi.labels = points_in(points, rect);
  roi.candidates.reserve(result.cells.size());
  for (const auto& c : result.cells) roi.candidates.push_back({c.x, c.y, c.f});
  return roi;
}

std::vector<eval::EvalRoi> evaluation_set(const std::vector<SlideEntry>& slides, const PipelineConfig& config,
                                          int workers) {
  std::vector<eval::EvalRoi> out;
  for (const auto& s : slides) {
    const auto pyramid = slide::SlidePyramid::open(s.dir);
    const auto ann = load_annotations(s.dir / "annotations.json");
    auto rects = ann.rois;
    if (rects.empty()) rects.push_back({0, 0, pyramid.width(), pyramid.height()});
    for (const auto& r : rects) out.push_back(evaluation_roi(pyramid, r, ann.points, config, workers));
  }
  return out;
}

}  // namespace tcr::pipeline
