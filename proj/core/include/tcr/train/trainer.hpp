#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tcr/image.hpp"
#include "tcr/model/unet.hpp"
#include "tcr/targets/augment.hpp"

namespace tcr::train {

enum class Split { train, validation, test };
const char* to_string(Split s);

/// Slide-level assignment; every ROI of a slide follows its slide.
struct DatasetSplit {
  std::vector<std::string> train, validation, test;
  std::map<std::string, Split> assignment;
  std::uint64_t seed = 0;
};

/// Seeded shuffle, then 10% validation and 20% test (rounded, at least one
/// slide each); the rest train. Needs at least 3 slides.
DatasetSplit partition(const std::vector<std::string>& slide_ids, std::uint64_t seed);

enum class ModelKind { detect_classify, segment };
const char* to_string(ModelKind k);
ModelKind model_kind_from(const std::string& name);
inline int out_maps(ModelKind k) { return k == ModelKind::segment ? 1 : 2; }

/// One annotated ROI rendered at the training magnification with its targets
/// ([detection, classification] or [segmentation]).
struct RoiData {
  std::string slide;
  Rect rect;  ///< level-0
  RgbImage image;
  std::vector<DensityMap> targets;
};

/// Reads every ROI of a slide directory (pyramid + annotations.json).
std::vector<RoiData> load_rois(const std::filesystem::path& slide_dir, const std::string& slide_id,
                               double magnification, ModelKind kind);

struct TrainConfig {
  double lr = 1e-3;
  int examples_per_epoch = 4000;
  int patience = 4;
  int batch_size = 8;
  int patch_size = 256;
  int max_epochs = 200;
  int validation_patches = 256;
  std::uint64_t seed = 1;
  double magnification = 20.0;
  ModelKind kind = ModelKind::detect_classify;
  bool augment = true;
  targets::AugmentRanges ranges;

  /// Rejects non-positive fields and patches smaller than the receptive field.
  void validate(const model::ModelConfig& model) const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct Patch {
  RgbImage image;
  std::vector<DensityMap> targets;
  std::size_t roi = 0;
  bool clamped = false;  ///< ROI smaller than the patch; padded with white / zero targets
};

/// Uniform ROI, uniform position, then (if enabled) color augmentation and a
/// dihedral transform applied to image and targets alike.
Patch sample_patch(std::span<const RoiData> rois, std::uint64_t seed, int patch_size, bool augment,
                   const targets::AugmentRanges& ranges = {});

/// Stop once `patience` epochs pass without a new minimum.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}
  /// Records an epoch's validation loss; returns true when training should stop.
  bool update(int epoch, double val_loss);
  [[nodiscard]] int best_epoch() const { return best_epoch_; }
  [[nodiscard]] double best_loss() const { return best_loss_; }
  [[nodiscard]] bool improved() const { return improved_; }

 private:
  int patience_;
  int best_epoch_ = 0;
  double best_loss_ = 0.0;
  bool has_best_ = false;
  bool improved_ = false;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> curve;
  double initial_val_loss = 0.0;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  bool early_stopped = false;
  std::int64_t clamped_patches = 0;
};

struct TrainingDiverged : std::runtime_error {
  int epoch;
  TrainingDiverged(int e, const std::string& what) : std::runtime_error(what), epoch(e) {}
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Adam on the mean BCE loss; after each epoch evaluates a fixed set of
/// unaugmented validation patches and keeps the best weights in `model`.
TrainResult train(model::UNet& model, std::span<const RoiData> train_rois,
                  std::span<const RoiData> validation_rois, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Mean BCE over patches in inference mode.
double evaluate_loss(const model::UNet& model, std::span<const Patch> patches, int batch_size);

/// Curve as CSV `epoch,train_loss,val_loss`.
void write_curve_csv(const std::vector<EpochRecord>& curve, const std::filesystem::path& path);

/// Weights file plus `<path>.json` with the config and best epoch.
void save_checkpoint(const model::UNet& model, const TrainConfig& config, const TrainResult& result,
                     const std::filesystem::path& path);

}  // namespace tcr::train
