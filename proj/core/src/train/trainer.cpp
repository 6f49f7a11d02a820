#include "tcr/train/trainer.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>

#include "tcr/annotations.hpp"
#include "tcr/io.hpp"
#include "tcr/model/weights_io.hpp"
#include "tcr/nn/adam.hpp"
#include "tcr/scale.hpp"
#include "tcr/slide/pyramid.hpp"
#include "tcr/targets/targets.hpp"

namespace tcr::train {

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

constexpr std::uint64_t kValidationStream = 0xffffffffull;

}  // namespace

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

DatasetSplit partition(const std::vector<std::string>& slide_ids, std::uint64_t seed) {
  const auto n = static_cast<std::int64_t>(slide_ids.size());
  if (n < 3) throw std::invalid_argument("partition needs at least 3 slides, got " + std::to_string(n));
  std::vector<std::string> order = slide_ids;
  std::sort(order.begin(), order.end());
  if (std::adjacent_find(order.begin(), order.end()) != order.end()) {
    throw std::invalid_argument("partition: duplicate slide id");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = std::max<std::int64_t>(1, std::llround(0.1 * static_cast<double>(n)));
  const auto n_test = std::max<std::int64_t>(1, std::llround(0.2 * static_cast<double>(n)));
  const auto n_train = n - n_val - n_test;
  DatasetSplit s;
  s.seed = seed;
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& id = order[static_cast<std::size_t>(i)];
    const Split which = i < n_train ? Split::train : i < n_train + n_val ? Split::validation : Split::test;
    (which == Split::train ? s.train : which == Split::validation ? s.validation : s.test).push_back(id);
    s.assignment[id] = which;
  }
  return s;
}

const char* to_string(ModelKind k) { return k == ModelKind::segment ? "SEG" : "DT+CL"; }

ModelKind model_kind_from(const std::string& name) {
  if (name == "DT+CL" || name == "dtcl") return ModelKind::detect_classify;
  if (name == "SEG" || name == "seg") return ModelKind::segment;
  throw std::invalid_argument("unknown model kind '" + name + "'");
}

std::vector<RoiData> load_rois(const std::filesystem::path& slide_dir, const std::string& slide_id,
                               double magnification, ModelKind kind) {
  const auto pyramid = slide::SlidePyramid::open(slide_dir);
  const auto ann = load_annotations(slide_dir / "annotations.json");
  const double factor = read_factor(pyramid.mpp(), magnification);
  if (!(factor > 0.0) || factor > 1.0 + 1e-9) {
    throw std::invalid_argument("slide " + slide_id + " cannot be read at " + std::to_string(magnification) + "X");
  }
  std::vector<Rect> rects = ann.rois;
  if (rects.empty()) rects.push_back({0, 0, pyramid.width(), pyramid.height()});
  const auto shape = targets::PeakShape::at_magnification(magnification);
  std::vector<RoiData> out;
  for (const auto& rect : rects) {
    auto read = pyramid.read_region(rect, std::min(1.0, factor));
    const Resampling res{read.rect.x, read.rect.y, std::min(1.0, factor)};
    RoiData roi{slide_id, read.rect, std::move(read.image), {}};
    const int w = roi.image.width, h = roi.image.height;
    if (kind == ModelKind::detect_classify) {
      roi.targets.push_back(targets::make_point_target(ann.points, w, h, res, shape, targets::PointMode::all));
      roi.targets.push_back(targets::make_point_target(ann.points, w, h, res, shape, targets::PointMode::tumor_only));
    } else {
      roi.targets.push_back(targets::make_area_target(ann.polygons, w, h, res));
    }
    out.push_back(std::move(roi));
  }
  return out;
}

void TrainConfig::validate(const model::ModelConfig& model) const {
  if (!(lr > 0.0) || examples_per_epoch <= 0 || patience <= 0 || batch_size <= 0 || patch_size <= 0 ||
      max_epochs <= 0 || validation_patches <= 0 || !(magnification > 0.0)) {
    throw std::invalid_argument("training config fields must be positive");
  }
  if (patch_size < model::receptive_field(model)) {
    throw std::invalid_argument("patch size " + std::to_string(patch_size) + " is below the receptive field " +
                                std::to_string(model::receptive_field(model)));
  }
  if (patch_size % model.min_input_size() != 0) {
    throw std::invalid_argument("patch size must be a multiple of " + std::to_string(model.min_input_size()));
  }
  if (model.out_maps != out_maps(kind)) throw std::invalid_argument("model output maps do not match the model kind");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"examples_per_epoch", c.examples_per_epoch},
          {"patience", c.patience},
          {"batch_size", c.batch_size},
          {"patch_size", c.patch_size},
          {"max_epochs", c.max_epochs},
          {"validation_patches", c.validation_patches},
          {"seed", c.seed},
          {"magnification", c.magnification},
          {"kind", to_string(c.kind)},
          {"augment", c.augment}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.examples_per_epoch = j.value("examples_per_epoch", c.examples_per_epoch);
  c.patience = j.value("patience", c.patience);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.validation_patches = j.value("validation_patches", c.validation_patches);
  c.seed = j.value("seed", c.seed);
  c.magnification = j.value("magnification", c.magnification);
  if (j.contains("kind")) c.kind = model_kind_from(j.at("kind").get<std::string>());
  c.augment = j.value("augment", c.augment);
  return c;
}

Patch sample_patch(std::span<const RoiData> rois, std::uint64_t seed, int patch_size, bool augment,
                   const targets::AugmentRanges& ranges) {
  if (rois.empty()) throw std::invalid_argument("sample_patch: empty ROI pool");
  std::mt19937_64 rng(seed);
  Patch p;
  p.roi = std::uniform_int_distribution<std::size_t>(0, rois.size() - 1)(rng);
  const auto& roi = rois[p.roi];
  const int w = roi.image.width, h = roi.image.height;
  const int x = std::uniform_int_distribution<int>(0, std::max(0, w - patch_size))(rng);
  const int y = std::uniform_int_distribution<int>(0, std::max(0, h - patch_size))(rng);
  const int cw = std::min(patch_size, w), ch = std::min(patch_size, h);
  p.clamped = cw < patch_size || ch < patch_size;
  p.image = RgbImage(patch_size, patch_size, 255);
  for (int r = 0; r < ch; ++r) std::copy_n(roi.image.px(x, y + r), cw * 3, p.image.px(0, r));
  for (const auto& t : roi.targets) {
    DensityMap m(patch_size, patch_size);
    for (int r = 0; r < ch; ++r) std::copy_n(&t.values[static_cast<std::size_t>(y + r) * w + x], cw, &m.values[static_cast<std::size_t>(r) * patch_size]);
    p.targets.push_back(std::move(m));
  }
  if (augment) {
    const auto params = targets::sample_augment(rng(), ranges);
    static const auto basis = targets::StainBasis::he();
    p.image = targets::dihedral(targets::apply_color(p.image, params, basis), params.dihedral);
    for (auto& t : p.targets) t = targets::dihedral(t, params.dihedral);
  }
  return p;
}

bool EarlyStopping::update(int epoch, double val_loss) {
  improved_ = !has_best_ || val_loss < best_loss_;
  if (improved_) {
    has_best_ = true;
    best_loss_ = val_loss;
    best_epoch_ = epoch;
  }
  return epoch - best_epoch_ >= patience_;
}

namespace {

struct Batch {
  nn::BasicTensor<float> input, target;
};

Batch make_batch(std::span<const Patch> patches) {
  const int n = static_cast<int>(patches.size());
  const int s = patches.front().image.width;
  const int m = static_cast<int>(patches.front().targets.size());
  Batch b{nn::BasicTensor<float>(nn::Shape{n, 3, s, s}), nn::BasicTensor<float>(nn::Shape{n, m, s, s})};
  const std::size_t plane = static_cast<std::size_t>(s) * s;
  for (int i = 0; i < n; ++i) {
    const auto* px = patches[static_cast<std::size_t>(i)].image.pixels.data();
    for (int c = 0; c < 3; ++c) {
      float* dst = b.input.plane(i, c);
      for (std::size_t k = 0; k < plane; ++k) dst[k] = static_cast<float>(px[3 * k + c] / 255.0);
    }
    for (int c = 0; c < m; ++c) {
      std::copy_n(patches[static_cast<std::size_t>(i)].targets[static_cast<std::size_t>(c)].values.data(), plane,
                  b.target.plane(i, c));
    }
  }
  return b;
}

struct Snapshot {
  std::vector<nn::BasicTensor<float>> values;
  std::vector<nn::BatchNormStats<float>> stats;
};

Snapshot snapshot(model::UNet& m) {
  Snapshot s;
  for (const auto& p : m.parameters()) s.values.push_back(p.value);
  s.stats = m.batchnorm_stats();
  return s;
}

void restore(model::UNet& m, const Snapshot& s) {
  auto params = m.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) params[i].value = s.values[i];
  m.batchnorm_stats() = s.stats;
}

}  // namespace

double evaluate_loss(const model::UNet& model, std::span<const Patch> patches, int batch_size) {
  if (patches.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < patches.size(); i += static_cast<std::size_t>(batch_size)) {
    const auto chunk = patches.subspan(i, std::min<std::size_t>(static_cast<std::size_t>(batch_size), patches.size() - i));
    const auto b = make_batch(chunk);
    total += nn::bce_with_sigmoid(model.logits(b.input), b.target).loss * static_cast<double>(chunk.size());
  }
  return total / static_cast<double>(patches.size());
}

TrainResult train(model::UNet& model, std::span<const RoiData> train_rois, std::span<const RoiData> validation_rois,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate(model.config());
  if (train_rois.empty() || validation_rois.empty()) throw std::invalid_argument("train needs training and validation ROIs");
  for (const auto& r : train_rois) {
    if (r.targets.size() != static_cast<std::size_t>(model.config().out_maps)) {
      throw std::invalid_argument("ROI targets do not match the model outputs");
    }
  }
  TrainResult result;
  std::vector<Patch> validation;
  for (int i = 0; i < config.validation_patches; ++i) {
    validation.push_back(sample_patch(validation_rois, derive_seed(config.seed, kValidationStream, static_cast<std::uint64_t>(i)),
                                      config.patch_size, false));
  }
  result.initial_val_loss = evaluate_loss(model, validation, config.batch_size);

  nn::AdamState<float> adam;
  const nn::AdamConfig adam_config{config.lr};
  EarlyStopping stopper(config.patience);
  Snapshot best = snapshot(model);
  const int steps = (config.examples_per_epoch + config.batch_size - 1) / config.batch_size;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    double loss_sum = 0.0;
    for (int step = 0; step < steps; ++step) {
      std::vector<Patch> patches;
      for (int b = 0; b < config.batch_size; ++b) {
        const auto index = static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(config.batch_size) + static_cast<std::uint64_t>(b);
        patches.push_back(sample_patch(train_rois, derive_seed(config.seed, static_cast<std::uint64_t>(epoch), index),
                                       config.patch_size, config.augment, config.ranges));
        result.clamped_patches += patches.back().clamped;
      }
      const auto batch = make_batch(patches);
      model.zero_grad();
      const auto loss = nn::bce_with_sigmoid(model.forward_train(batch.input), batch.target);
      if (!std::isfinite(loss.loss)) {
        throw TrainingDiverged(epoch, "training diverged (non-finite loss) in epoch " + std::to_string(epoch));
      }
      model.backward(loss.grad);
      nn::adam_step(model.parameters(), adam, adam_config);
      loss_sum += loss.loss;
    }
    EpochRecord rec{epoch, loss_sum / steps, evaluate_loss(model, validation, config.batch_size)};
    if (!std::isfinite(rec.val_loss)) {
      throw TrainingDiverged(epoch, "validation loss is not finite in epoch " + std::to_string(epoch));
    }
    result.curve.push_back(rec);
    const bool stop = stopper.update(epoch, rec.val_loss);
    if (stopper.improved()) best = snapshot(model);
    if (on_epoch) on_epoch(rec);
    if (stop) {
      result.early_stopped = true;
      break;
    }
  }
  restore(model, best);
  result.best_epoch = stopper.best_epoch();
  result.best_val_loss = result.curve.empty() ? result.initial_val_loss : stopper.best_loss();
  return result;
}

void write_curve_csv(const std::vector<EpochRecord>& curve, const std::filesystem::path& path) {
  std::string text = "epoch,train_loss,val_loss\n";
  char line[96];
  for (const auto& r : curve) {
    std::snprintf(line, sizeof line, "%d,%.9g,%.9g\n", r.epoch, r.train_loss, r.val_loss);
    text += line;
  }
  write_file_atomic(path, text);
}

void save_checkpoint(const model::UNet& model, const TrainConfig& config, const TrainResult& result,
                     const std::filesystem::path& path) {
  model::save_weights(model, path);
  auto sidecar = path;
  sidecar += ".json";
  const nlohmann::json j = {{"config", to_json(config)},
                            {"best_epoch", result.best_epoch},
                            {"best_val_loss", result.best_val_loss},
                            {"initial_val_loss", result.initial_val_loss},
                            {"epochs_run", result.curve.size()},
                            {"early_stopped", result.early_stopped}};
  write_file_atomic(sidecar, j.dump(2));
}

}  // namespace tcr::train
