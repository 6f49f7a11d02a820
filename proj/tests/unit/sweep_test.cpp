#include <gtest/gtest.h>

#include <filesystem>
#include <limits>
#include <nlohmann/json.hpp>

#include "tcr/eval/sweep.hpp"
#include "tcr/eval/tune.hpp"
#include "tcr/slide/synth.hpp"
#include "tcr/targets/targets.hpp"

namespace tcr::eval {
namespace {

namespace fs = std::filesystem;

// Oracle maps rendered from ground truth: peaks at every cell for map_d and
// the nearest cell's class for map_c.
MapSource oracle(std::vector<PointAnnotation> points) {
  return {[pts = std::move(points)](const RgbImage& image, const Rect& win, double f) {
            const Resampling global{0, 0, f};
            const auto shape = targets::PeakShape::at_magnification(40.0 * f);
            const auto full = targets::make_point_target(pts, static_cast<int>(win.right()), static_cast<int>(win.bottom()),
                                                         global, shape, targets::PointMode::all);
            DensityMap cls(image.width, image.height);
            for (int y = 0; y < cls.height; ++y)
              for (int x = 0; x < cls.width; ++x) {
                const double cx = (static_cast<double>(win.x + x) + 0.5) / f, cy = (static_cast<double>(win.y + y) + 0.5) / f;
                double best = std::numeric_limits<double>::infinity();
                for (const auto& p : pts) {
                  const double d = std::hypot(p.x + 0.5 - cx, p.y + 0.5 - cy);
                  if (d < best) {
                    best = d;
                    cls.at(x, y) = p.cls == CellClass::tumor ? 1.0f : 0.0f;
                  }
                }
              }
            return std::vector<DensityMap>{crop(full, static_cast<int>(win.x), static_cast<int>(win.y), image.width, image.height),
                                           cls};
          },
          3};
}

class SweepFixture : public testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(fs::path(testing::TempDir()) / "tcr_sweep_slide");
    fs::remove_all(*dir_);
    slide::SynthParams p;
    p.width = p.height = 384;
    p.tumor_blobs = 1;
    p.blob_radius_um = {25.0, 30.0};
    p.seed = 5;
    truth_ = new slide::SyntheticSlide(slide::write_synthetic_slide(p, *dir_, 128));
    slide_ = new slide::SlidePyramid(slide::SlidePyramid::open(*dir_));
  }
  static void TearDownTestSuite() {
    delete slide_;
    delete truth_;
    fs::remove_all(*dir_);
    delete dir_;
  }
  static std::vector<SweepRoi> rois() {
    return {SweepRoi{slide_, Rect{0, 0, 384, 384}, truth_->annotations.points}};
  }

  static inline fs::path* dir_ = nullptr;
  static inline slide::SyntheticSlide* truth_ = nullptr;
  static inline slide::SlidePyramid* slide_ = nullptr;
};

TEST_F(SweepFixture, OracleMapsScorePerfectlyAtEveryFactor) {
  const auto counts = count_cells(truth_->annotations.points, Rect{0, 0, 384, 384});
  ASSERT_GT(counts.tumor, 0);
  ASSERT_LT(counts.tumor, counts.total);
  std::map<double, MapSource> sources;
  for (double f : kSweepFactors) sources[f] = oracle(truth_->annotations.points);
  const SweepMode modes[] = {SweepMode::det, SweepMode::cls, SweepMode::det_cls};
  const auto points = magnification_sweep(sources, rois(), modes, post::Thresholds{0.5, 0.5, 0.5});
  ASSERT_EQ(points.size(), 24u);
  for (const auto& p : points) {
    EXPECT_FALSE(p.missing);
    EXPECT_DOUBLE_EQ(p.f1, 1.0) << p.factor << " " << to_string(p.mode);
  }
}

TEST_F(SweepFixture, MissingModelIsFlaggedAndSkipped) {
  std::map<double, MapSource> sources{{1.0, oracle(truth_->annotations.points)}, {0.5, oracle(truth_->annotations.points)}};
  const SweepMode modes[] = {SweepMode::det};
  const auto points = magnification_sweep(sources, rois(), modes, post::Thresholds{});
  ASSERT_EQ(points.size(), 8u);
  int missing = 0;
  for (const auto& p : points) missing += p.missing;
  EXPECT_EQ(missing, 6);
  const auto csv = sweep_csv(points);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "factor,det_f1,cls_f1,det_cls_f1,missing");
  EXPECT_NE(csv.find("\n1,1,,,0\n"), std::string::npos) << csv;
  EXPECT_NE(csv.find("\n0.8,,,,1\n"), std::string::npos) << csv;
  const auto j = to_json(points);
  EXPECT_EQ(j[1]["missing"], true);
  EXPECT_FALSE(j[1].contains("f1"));
}

TEST_F(SweepFixture, FullResolutionMatchesStandaloneEvaluation) {
  const auto src = model_source(std::make_shared<const model::UNet>(model::ModelConfig::desk(2), 3));
  const post::Thresholds t{0.3, 0.5, 0.5};
  const SweepMode modes[] = {SweepMode::det};
  const double factors[] = {1.0};
  const auto points = magnification_sweep({{1.0, src}}, rois(), modes, t, factors);
  ASSERT_EQ(points.size(), 1u);

  const auto image = slide_->read_raster(Rect{0, 0, 384, 384}, 1.0);
  const auto maps = src.maps(image, Rect{0, 0, 384, 384}, 1.0);
  EvalRoi roi{make_candidates(maps[0], maps[1], nullptr, {}, Resampling{0, 0, 1.0}), truth_->annotations.points,
              slide_->mpp()};
  const auto report = evaluate(std::span(&roi, 1), t);
  EXPECT_EQ(points[0].counts.tp, report.detection.tp);
  EXPECT_EQ(points[0].counts.fp, report.detection.fp);
  EXPECT_EQ(points[0].counts.fn, report.detection.fn);
  EXPECT_EQ(points[0].f1, report.detection.f1);
}

TEST_F(SweepFixture, RejectsBadInput) {
  const SweepMode modes[] = {SweepMode::det};
  const double bad[] = {1.5};
  EXPECT_THROW(magnification_sweep({}, rois(), modes, post::Thresholds{}, bad), std::invalid_argument);
  EXPECT_THROW(magnification_sweep({}, {}, modes, post::Thresholds{}), std::invalid_argument);
  EXPECT_THROW(sweep_mode_from("both"), std::invalid_argument);
  EXPECT_EQ(sweep_mode_from("det+cls"), SweepMode::det_cls);
  EXPECT_THROW(model_source(std::make_shared<const model::UNet>(model::ModelConfig::desk(1), 1)), std::invalid_argument);
}

}  // namespace
}  // namespace tcr::eval
