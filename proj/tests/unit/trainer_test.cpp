#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <random>
#include <set>

#include "tcr/io.hpp"
#include "tcr/model/weights_io.hpp"
#include "tcr/slide/synth.hpp"
#include "tcr/targets/targets.hpp"
#include "tcr/train/trainer.hpp"

namespace tcr::train {
namespace {

namespace fs = std::filesystem;

std::vector<std::string> ids(int n) {
  std::vector<std::string> v;
  for (int i = 0; i < n; ++i) v.push_back("slide" + std::to_string(i));
  return v;
}

TEST(Partition, Proportions) {
  const auto s10 = partition(ids(10), 1);
  EXPECT_EQ(s10.train.size(), 7u);
  EXPECT_EQ(s10.validation.size(), 1u);
  EXPECT_EQ(s10.test.size(), 2u);
  const auto s100 = partition(ids(100), 1);
  EXPECT_EQ(s100.train.size(), 70u);
  EXPECT_EQ(s100.validation.size(), 10u);
  EXPECT_EQ(s100.test.size(), 20u);
  const auto s3 = partition(ids(3), 1);
  EXPECT_EQ(s3.train.size(), 1u);
  EXPECT_EQ(s3.validation.size(), 1u);
  EXPECT_EQ(s3.test.size(), 1u);
  EXPECT_THROW(partition(ids(2), 1), std::invalid_argument);
}

TEST(Partition, DeterministicAndDisjoint) {
  const auto a = partition(ids(40), 9), b = partition(ids(40), 9);
  EXPECT_EQ(a.assignment, b.assignment);
  EXPECT_EQ(a.train, b.train);
  EXPECT_NE(partition(ids(40), 10).train, a.train);
  std::set<std::string> seen;
  for (const auto* list : {&a.train, &a.validation, &a.test})
    for (const auto& id : *list) EXPECT_TRUE(seen.insert(id).second) << id;
  EXPECT_EQ(seen.size(), 40u);
  auto shuffled = ids(40);
  std::reverse(shuffled.begin(), shuffled.end());
  EXPECT_EQ(partition(shuffled, 9).assignment, a.assignment);
}

TEST(EarlyStopping, StopsPatienceEpochsAfterLastImprovement) {
  for (int k = 1; k <= 6; ++k) {
    EarlyStopping s(4);
    int stopped = 0;
    for (int epoch = 1; epoch <= 50; ++epoch) {
      const double loss = epoch <= k ? 1.0 / epoch : 1.0;  // improves only at 1..k
      if (s.update(epoch, loss)) {
        stopped = epoch;
        break;
      }
    }
    EXPECT_EQ(stopped, k + 4);
    EXPECT_EQ(s.best_epoch(), k);
  }
}

// Dark field with bright disks; targets are unit peaks at disk centers.
std::vector<RoiData> blob_rois(int count, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<RoiData> rois;
  for (int r = 0; r < count; ++r) {
    RoiData roi{"toy" + std::to_string(r), {0, 0, size, size}, RgbImage(size, size, 20), {}};
    std::vector<PointAnnotation> pts;
    std::uniform_int_distribution<int> pos(4, size - 5);
    for (int i = 0; i < size * size / 300; ++i) pts.push_back({pos(rng), pos(rng), i % 2 ? CellClass::tumor : CellClass::normal});
    for (const auto& p : pts)
      for (int y = -3; y <= 3; ++y)
        for (int x = -3; x <= 3; ++x)
          if (x * x + y * y <= 9) std::fill_n(roi.image.px(p.x + x, p.y + y), 3, 230);
    const targets::PeakShape shape{2, 1.0};
    roi.targets.push_back(targets::make_point_target(pts, size, size, {}, shape, targets::PointMode::all));
    roi.targets.push_back(targets::make_point_target(pts, size, size, {}, shape, targets::PointMode::tumor_only));
    rois.push_back(std::move(roi));
  }
  return rois;
}

TEST(SamplePatch, RepeatableWithoutAugmentation) {
  const auto rois = blob_rois(3, 64, 1);
  const auto a = sample_patch(rois, 42, 32, false), b = sample_patch(rois, 42, 32, false);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.targets, b.targets);
  const auto c = sample_patch(rois, 42, 32, true), d = sample_patch(rois, 42, 32, true);
  EXPECT_EQ(c.image, d.image);
}

TEST(SamplePatch, TumorTargetIsSubsetOfDetectionTarget) {
  const auto rois = blob_rois(4, 96, 2);
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto p = sample_patch(rois, s, 48, true);
    for (std::size_t i = 0; i < p.targets[1].values.size(); ++i)
      if (p.targets[1].values[i] > 0) ASSERT_GT(p.targets[0].values[i], 0);
  }
}

TEST(SamplePatch, GeometryFollowsImage) {
  // Bright disks sit at target peaks before and after every dihedral transform.
  const auto rois = blob_rois(2, 64, 3);
  for (std::uint64_t s = 0; s < 40; ++s) {
    const auto p = sample_patch(rois, s, 64, true);
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x)
        if (p.targets[0].at(x, y) == 1.0f) ASSERT_GT(p.image.px(x, y)[1], 120) << s;
  }
}

TEST(SamplePatch, UniformOverRois) {
  const auto rois = blob_rois(10, 40, 4);
  std::vector<int> counts(10);
  for (std::uint64_t s = 0; s < 1000; ++s) ++counts[sample_patch(rois, s * 7919 + 1, 32, false).roi];
  double chi2 = 0;
  for (int c : counts) chi2 += (c - 100.0) * (c - 100.0) / 100.0;
  EXPECT_LT(chi2, 21.67);  // df 9, p = 0.01
  for (int c : counts) EXPECT_GT(c, 0);
}

TEST(SamplePatch, SmallRoiIsPaddedAndFlagged) {
  const auto rois = blob_rois(1, 24, 5);
  const auto p = sample_patch(rois, 1, 32, false);
  EXPECT_TRUE(p.clamped);
  EXPECT_EQ(p.image.width, 32);
  EXPECT_EQ(p.image.px(31, 31)[0], 255);
  EXPECT_EQ(p.targets[0].at(31, 31), 0.0f);
  EXPECT_THROW(sample_patch({}, 1, 32, false), std::invalid_argument);
}

model::ModelConfig toy_model() {
  model::ModelConfig c;
  c.levels = 2;
  c.base_channels = 4;
  c.out_maps = 2;
  return c;
}

TrainConfig toy_config() {
  TrainConfig c;
  c.examples_per_epoch = 96;
  c.batch_size = 8;
  c.patch_size = 32;
  c.max_epochs = 8;
  c.validation_patches = 16;
  c.lr = 1e-2;
  c.seed = 3;
  return c;
}

TEST(Train, ToyTaskHalvesValidationLoss) {
  const auto rois = blob_rois(6, 96, 6);
  model::UNet m(toy_model(), 1);
  std::vector<EpochRecord> seen;
  const auto r = train(m, std::span(rois).first(5), std::span(rois).last(1), toy_config(),
                       [&](const EpochRecord& e) { seen.push_back(e); });
  EXPECT_EQ(seen.size(), r.curve.size());
  EXPECT_LT(r.best_val_loss, 0.5 * r.initial_val_loss);
  double min_val = 1e9;
  for (const auto& e : r.curve) min_val = std::min(min_val, e.val_loss);
  EXPECT_EQ(r.best_val_loss, min_val);
  // The returned weights are the best epoch's, not the last.
  std::vector<Patch> val;
  for (int i = 0; i < 4; ++i) val.push_back(sample_patch(std::span(rois).last(1), i, 32, false));
  EXPECT_TRUE(std::isfinite(evaluate_loss(m, val, 4)));
}

TEST(Train, ReproducibleCurve) {
  const auto rois = blob_rois(4, 64, 7);
  auto cfg = toy_config();
  cfg.max_epochs = 3;
  model::UNet a(toy_model(), 5), b(toy_model(), 5);
  const auto ra = train(a, std::span(rois).first(3), std::span(rois).last(1), cfg);
  const auto rb = train(b, std::span(rois).first(3), std::span(rois).last(1), cfg);
  ASSERT_EQ(ra.curve.size(), rb.curve.size());
  for (std::size_t i = 0; i < ra.curve.size(); ++i) {
    EXPECT_EQ(ra.curve[i].train_loss, rb.curve[i].train_loss);
    EXPECT_EQ(ra.curve[i].val_loss, rb.curve[i].val_loss);
  }
}

TEST(Train, RestoresBestEpochWeights) {
  const auto rois = blob_rois(4, 64, 8);
  auto cfg = toy_config();
  cfg.max_epochs = 6;
  cfg.lr = 0.3;  // unstable on purpose: later epochs tend to be worse
  model::UNet m(toy_model(), 2);
  const auto r = train(m, std::span(rois).first(3), std::span(rois).last(1), cfg);
  double min_val = 1e9;
  for (const auto& e : r.curve) min_val = std::min(min_val, e.val_loss);
  EXPECT_EQ(r.best_val_loss, min_val);
  EXPECT_EQ(r.curve[static_cast<std::size_t>(r.best_epoch - 1)].val_loss, min_val);
}

TEST(Train, DivergenceAbortsWithEpoch) {
  const auto rois = blob_rois(3, 64, 9);
  model::UNet m(toy_model(), 3);
  auto cfg = toy_config();
  cfg.max_epochs = 3;
  cfg.lr = 1e30;
  try {
    train(m, rois, rois, cfg);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_GE(e.epoch, 1);
    EXPECT_LE(e.epoch, 3);
    EXPECT_NE(std::string(e.what()).find(std::to_string(e.epoch)), std::string::npos);
  }
}

TEST(Train, ConfigValidation) {
  model::UNet m(toy_model(), 1);
  auto cfg = toy_config();
  cfg.patch_size = 8;
  EXPECT_THROW(cfg.validate(m.config()), std::invalid_argument);
  cfg = toy_config();
  cfg.kind = ModelKind::segment;
  EXPECT_THROW(cfg.validate(m.config()), std::invalid_argument);
  cfg = toy_config();
  cfg.lr = 0;
  EXPECT_THROW(cfg.validate(m.config()), std::invalid_argument);
  EXPECT_NO_THROW(toy_config().validate(m.config()));
}

TEST(Train, CurveCsvAndCheckpoint) {
  const auto dir = fs::path(testing::TempDir()) / "tcr_trainer_ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  TrainResult r;
  r.curve = {{1, 0.5, 0.4}, {2, 0.3, 0.35}};
  r.best_epoch = 2;
  write_curve_csv(r.curve, dir / "curve.csv");
  const auto csv = read_file(dir / "curve.csv");
  EXPECT_EQ(std::string(csv.begin(), csv.end()), "epoch,train_loss,val_loss\n1,0.5,0.4\n2,0.3,0.35\n");
  model::UNet m(toy_model(), 1);
  save_checkpoint(m, toy_config(), r, dir / "model.fcnw");
  const auto loaded = model::load_weights(dir / "model.fcnw", 2);
  EXPECT_EQ(loaded.config(), m.config());
  const auto side = nlohmann::json::parse(read_file(dir / "model.fcnw.json"));
  EXPECT_EQ(side.at("best_epoch"), 2);
  EXPECT_EQ(train_config_from_json(side.at("config")).patch_size, 32);
}

TEST(LoadRois, RendersTargetsAtMagnification) {
  const auto dir = fs::path(testing::TempDir()) / "tcr_trainer_slide";
  fs::remove_all(dir);
  slide::SynthParams p;
  p.width = 512;
  p.height = 384;
  p.seed = 4;
  p.blob_radius_um = {20, 30};
  const auto s = slide::write_synthetic_slide(p, dir);
  const auto rois = load_rois(dir, "s", 20.0, ModelKind::detect_classify);
  ASSERT_EQ(rois.size(), 4u);
  EXPECT_EQ(rois[0].image.width, 128);
  EXPECT_EQ(rois[0].targets.size(), 2u);
  int peaks = 0;
  for (const auto& roi : rois)
    for (float v : roi.targets[0].values) peaks += v == 1.0f;
  EXPECT_EQ(peaks, static_cast<int>(s.annotations.points.size()));
  const auto seg = load_rois(dir, "s", 10.0, ModelKind::segment);
  EXPECT_EQ(seg[0].image.width, 64);
  EXPECT_EQ(seg[0].targets.size(), 1u);
  EXPECT_THROW(load_rois(dir, "s", 80.0, ModelKind::segment), std::invalid_argument);
}

}  // namespace
}  // namespace tcr::train
