#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tcr/annotations.hpp"
#include "tcr/eval/tune.hpp"
#include "tcr/pipeline/pipeline.hpp"

namespace tcr::pipeline {

/// A slide directory: pyramid manifest plus annotations.json.
struct SlideEntry {
  std::string id;
  std::filesystem::path dir;
};

/// Subdirectories of `data_dir` holding a manifest, sorted by name.
std::vector<SlideEntry> list_slides(const std::filesystem::path& data_dir);

/// Entries whose id is in `ids`, in `ids` order. Throws on unknown ids.
std::vector<SlideEntry> select_slides(const std::vector<SlideEntry>& all, const std::vector<std::string>& ids);

/// Runs the pipeline over `rect` with t_d = 0 so every peak becomes a
/// candidate carrying exactly the features inference would compute.
eval::EvalRoi evaluation_roi(const slide::SlidePyramid& slide, const Rect& rect,
                             const std::vector<PointAnnotation>& points, const PipelineConfig& config, int workers);

/// One EvalRoi per annotated ROI (the whole slide when none are listed).
std::vector<eval::EvalRoi> evaluation_set(const std::vector<SlideEntry>& slides, const PipelineConfig& config,
                                          int workers);

}  // namespace tcr::pipeline
