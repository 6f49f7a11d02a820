#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "tcr/eval/sweep.hpp"
#include "tcr/eval/tune.hpp"
#include "tcr/io.hpp"
#include "tcr/model/weights_io.hpp"
#include "tcr/pipeline/dataset.hpp"
#include "tcr/pipeline/pipeline.hpp"
#include "tcr/server/api.hpp"
#include "tcr/slide/synth.hpp"
#include "tcr/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace tcr;

namespace {

Rect parse_rect(const std::string& text) {
  Rect r;
  char c1 = 0, c2 = 0, c3 = 0;
  std::istringstream in(text);
  if (!(in >> r.x >> c1 >> r.y >> c2 >> r.w >> c3 >> r.h) || c1 != ',' || c2 != ',' || c3 != ',' || !in.eof()) {
    throw CLI::ValidationError("--region", "expected X,Y,W,H");
  }
  return r;
}

nlohmann::json read_json(const fs::path& path) {
  const auto bytes = read_file(path);
  return nlohmann::json::parse(bytes.begin(), bytes.end());
}

pipeline::PipelineConfig load_config(const fs::path& path, pipeline::StageTiming* timing = nullptr) {
  return pipeline::load_pipeline_config(read_json(path), path.parent_path(), timing);
}

std::vector<pipeline::SlideEntry> split_slides(const fs::path& data, const std::string& which, std::uint64_t seed) {
  const auto all = pipeline::list_slides(data);
  if (which == "all") return all;
  std::vector<std::string> ids;
  for (const auto& s : all) ids.push_back(s.id);
  const auto split = train::partition(ids, seed);
  if (which == "train") return pipeline::select_slides(all, split.train);
  if (which == "validation") return pipeline::select_slides(all, split.validation);
  if (which == "test") return pipeline::select_slides(all, split.test);
  if (which == "tune") {
    auto both = split.train;
    both.insert(both.end(), split.validation.begin(), split.validation.end());
    return pipeline::select_slides(all, both);
  }
  throw CLI::ValidationError("--split", "use train, validation, test, tune or all");
}

struct SynthArgs {
  fs::path out;
  int count = 40;
  std::uint64_t seed = 1;
  int width = 1024, height = 1024, tile = 256, blobs = 2;
  double ambiguous = 0.0, tint = 0.0;
};

int run_synth(const SynthArgs& a) {
  for (int i = 0; i < a.count; ++i) {
    slide::SynthParams p;
    p.width = a.width;
    p.height = a.height;
    p.tumor_blobs = a.blobs;
    p.ambiguous_fraction = a.ambiguous;
    p.region_tint = a.tint;
    p.seed = a.seed * 1000003u + static_cast<std::uint64_t>(i);
    char id[32];
    std::snprintf(id, sizeof id, "slide_%03d", i);
    const auto s = slide::write_synthetic_slide(p, a.out / id, a.tile);
    std::cout << id << " cells=" << s.annotations.points.size() << "\n";
  }
  return 0;
}

struct TrainArgs {
  fs::path data, out, config, curve;
  std::string kind = "dtcl";
  double magnification = 20.0;
  std::uint64_t split_seed = 1;
  int levels = 3, base = 16;
  std::optional<int> epochs, examples, patch, batch, patience, validation;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
};

int run_train(const TrainArgs& a) {
  train::TrainConfig cfg = a.config.empty() ? train::TrainConfig{} : train::train_config_from_json(read_json(a.config));
  cfg.kind = train::model_kind_from(a.kind);
  cfg.magnification = a.magnification;
  if (a.epochs) cfg.max_epochs = *a.epochs;
  if (a.examples) cfg.examples_per_epoch = *a.examples;
  if (a.patch) cfg.patch_size = *a.patch;
  if (a.batch) cfg.batch_size = *a.batch;
  if (a.patience) cfg.patience = *a.patience;
  if (a.validation) cfg.validation_patches = *a.validation;
  if (a.lr) cfg.lr = *a.lr;
  if (a.seed) cfg.seed = *a.seed;

  model::ModelConfig mc = model::ModelConfig::desk(train::out_maps(cfg.kind));
  mc.levels = a.levels;
  mc.base_channels = a.base;
  cfg.validate(mc);

  auto load = [&](const std::string& which) {
    std::vector<train::RoiData> rois;
    for (const auto& s : split_slides(a.data, which, a.split_seed)) {
      auto r = train::load_rois(s.dir, s.id, cfg.magnification, cfg.kind);
      std::move(r.begin(), r.end(), std::back_inserter(rois));
    }
    return rois;
  };
  const auto train_rois = load("train");
  const auto val_rois = load("validation");
  std::cout << "train ROIs " << train_rois.size() << ", validation ROIs " << val_rois.size() << "\n";

  model::UNet net(mc, cfg.seed);
  const auto result = train::train(net, train_rois, val_rois, cfg, [](const train::EpochRecord& e) {
    std::printf("epoch %d train %.5f val %.5f\n", e.epoch, e.train_loss, e.val_loss);
    std::fflush(stdout);
  });
  train::save_checkpoint(net, cfg, result, a.out);
  train::write_curve_csv(result.curve, a.curve.empty() ? fs::path(a.out.string() + ".curve.csv") : a.curve);
  std::printf("best epoch %d val %.5f%s\n", result.best_epoch, result.best_val_loss,
              result.early_stopped ? " (early stop)" : "");
  return 0;
}

struct TuneArgs {
  fs::path data, config;
  std::uint64_t split_seed = 1;
  double step = 0.05;
  bool joint = false;
  int workers = 1;
};

int run_tune(const TuneArgs& a) {
  auto json = read_json(a.config);
  const auto cfg = pipeline::load_pipeline_config(json, a.config.parent_path());
  const auto rois = pipeline::evaluation_set(split_slides(a.data, "tune", a.split_seed), cfg, a.workers);
  eval::TuneOptions opt;
  opt.grid = eval::threshold_grid(a.step);
  opt.alpha = cfg.thresholds.alpha;
  opt.joint = a.joint;
  const auto r = eval::tune_thresholds(rois, opt);
  json["thresholds"] = {{"t_d", r.thresholds.t_d}, {"t_c", r.thresholds.t_c}, {"alpha", r.thresholds.alpha}};
  write_file_atomic(a.config, json.dump(2) + "\n");
  std::printf("t_d %.4g t_c %.4g (detection F1 %.4f, E_TCR %.4f)\n", r.thresholds.t_d, r.thresholds.t_c, r.detection_f1,
              r.e_tcr);
  if (r.joint) std::printf("joint search: t_d %.4g t_c %.4g E_TCR %.4f\n", r.joint->t_d, r.joint->t_c, r.joint->e_tcr);
  return 0;
}

struct EvalArgs {
  fs::path data, config, out;
  std::string split = "test";
  std::uint64_t split_seed = 1;
  int workers = 1;
};

int run_eval(const EvalArgs& a) {
  const auto cfg = load_config(a.config);
  const auto rois = pipeline::evaluation_set(split_slides(a.data, a.split, a.split_seed), cfg, a.workers);
  const auto report = eval::evaluate(rois, cfg.thresholds);
  const auto j = eval::to_json(report);
  if (!a.out.empty()) write_file_atomic(a.out, j.dump(2) + "\n");
  std::printf("detection F1 %.4f  classification accuracy %.4f  TCR MAE %.4f  (%zu ROIs)\n", report.detection.f1,
              report.classification.accuracy, report.e_tcr, rois.size());
  return 0;
}

struct SweepArgs {
  fs::path data, out, json_out;
  std::vector<std::string> models, modes{"det", "cls", "det+cls"};
  std::string split = "test";
  std::uint64_t split_seed = 1;
  double t_d = 0.5, t_c = 0.5;
};

int run_sweep(const SweepArgs& a) {
  std::map<double, eval::MapSource> sources;
  for (const auto& m : a.models) {
    const auto eq = m.find('=');
    if (eq == std::string::npos) throw CLI::ValidationError("--model", "expected FACTOR=WEIGHTS");
    const double f = std::stod(m.substr(0, eq));
    sources[f] = eval::model_source(std::make_shared<const model::UNet>(model::load_weights(m.substr(eq + 1), 2)));
  }
  std::vector<eval::SweepMode> modes;
  for (const auto& m : a.modes) modes.push_back(eval::sweep_mode_from(m));
  std::vector<std::unique_ptr<slide::SlidePyramid>> pyramids;
  std::vector<eval::SweepRoi> rois;
  for (const auto& s : split_slides(a.data, a.split, a.split_seed)) {
    pyramids.push_back(std::make_unique<slide::SlidePyramid>(slide::SlidePyramid::open(s.dir)));
    const auto ann = load_annotations(s.dir / "annotations.json");
    auto rects = ann.rois;
    if (rects.empty()) rects.push_back({0, 0, pyramids.back()->width(), pyramids.back()->height()});
    for (const auto& r : rects) rois.push_back({pyramids.back().get(), r, points_in(ann.points, r)});
  }
  const auto points = eval::magnification_sweep(sources, rois, modes, post::Thresholds{a.t_d, a.t_c, 0.5});
  const auto csv = eval::sweep_csv(points);
  if (a.out.empty()) std::cout << csv;
  else write_file_atomic(a.out, csv);
  if (!a.json_out.empty()) write_file_atomic(a.json_out, eval::to_json(points).dump(2) + "\n");
  for (const auto& p : points)
    if (p.missing) std::fprintf(stderr, "no model for factor %.4g; point skipped\n", p.factor);
  return 0;
}

struct AnalyzeArgs {
  fs::path slide, config, out;
  std::string region;
  int workers = 1;
  std::optional<double> heatmap_um;
};

int run_analyze(const AnalyzeArgs& a) {
  pipeline::StageTiming setup;
  auto cfg = load_config(a.config, &setup);
  if (a.heatmap_um) cfg.heatmap_um = *a.heatmap_um;
  const auto pyramid = slide::SlidePyramid::open(a.slide);
  const Rect region = a.region.empty() ? Rect{0, 0, pyramid.width(), pyramid.height()} : parse_rect(a.region);
  auto result = pipeline::run_pipeline(pyramid, region, cfg, a.workers);
  result.timing.merge(setup);
  result.timing.wall_seconds += setup.seconds[static_cast<std::size_t>(pipeline::Stage::model_setup)];
  pipeline::save_result(result, a.out);
  std::printf("overall TCR %.4f (%lld tumor / %lld cells), %.3f mm^2/s%s\n", result.tcr.ratio,
              static_cast<long long>(result.tcr.n_tumor), static_cast<long long>(result.tcr.n), result.throughput_mm2_s,
              result.partial() ? ", PARTIAL" : "");
  return result.partial() ? 3 : 0;
}

struct ServeArgs {
  std::string listen = "127.0.0.1:8080";
  fs::path slides, config, state = "tcr_state", static_dir;
  int workers = 1, jobs = 1;
};

server::HttpServer* g_http = nullptr;

int run_serve(const ServeArgs& a) {
  const auto colon = a.listen.rfind(':');
  if (colon == std::string::npos) throw CLI::ValidationError("--listen", "expected HOST:PORT");
  const auto host = a.listen.substr(0, colon);
  const int port = std::stoi(a.listen.substr(colon + 1));
  server::SlideRegistry slides(a.slides);
  std::shared_ptr<const pipeline::PipelineConfig> cfg;
  if (!a.config.empty()) cfg = std::make_shared<const pipeline::PipelineConfig>(load_config(a.config));
  server::JobManager jobs({a.state, a.workers, a.jobs}, slides, cfg);
  jobs.start();
  const server::Api api(slides, jobs);
  server::HttpServer http(api, a.static_dir);
  const int bound = http.bind(host, port);
  g_http = &http;
  std::signal(SIGINT, [](int) {
    if (g_http) g_http->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_http) g_http->stop();
  });
  std::printf("serving %zu slide(s) on http://%s:%d/api\n", slides.ids().size(), host.c_str(), bound);
  std::fflush(stdout);
  http.listen();
  g_http = nullptr;
  jobs.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tumor cell ratio counting on whole-slide images"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate synthetic annotated slides");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--count", synth.count, "Number of slides")->check(CLI::PositiveNumber);
  s->add_option("--seed", synth.seed, "Base seed");
  s->add_option("--width", synth.width, "Level-0 width")->check(CLI::PositiveNumber);
  s->add_option("--height", synth.height, "Level-0 height")->check(CLI::PositiveNumber);
  s->add_option("--tile", synth.tile, "Pyramid tile size")->check(CLI::PositiveNumber);
  s->add_option("--blobs", synth.blobs, "Tumor regions per slide")->check(CLI::NonNegativeNumber);
  s->add_option("--ambiguous", synth.ambiguous, "Fraction of tumor cells with normal morphology")->check(CLI::Range(0.0, 1.0));
  s->add_option("--tint", synth.tint, "Stroma tint inside tumor regions")->check(CLI::NonNegativeNumber);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model on a slide directory");
  t->add_option("--data", tr.data, "Directory of slides")->required()->check(CLI::ExistingDirectory);
  t->add_option("--out", tr.out, "Weights file")->required();
  t->add_option("--kind", tr.kind, "dtcl or seg")->check(CLI::IsMember({"dtcl", "seg", "DT+CL", "SEG"}));
  t->add_option("--magnification", tr.magnification, "Training magnification");
  t->add_option("--train-config", tr.config, "TrainConfig JSON")->check(CLI::ExistingFile);
  t->add_option("--curve", tr.curve, "Loss curve CSV");
  t->add_option("--split-seed", tr.split_seed, "Slide split seed");
  t->add_option("--levels", tr.levels, "U-net levels")->check(CLI::PositiveNumber);
  t->add_option("--base", tr.base, "Base channels")->check(CLI::PositiveNumber);
  t->add_option("--epochs", tr.epochs, "Maximum epochs");
  t->add_option("--examples", tr.examples, "Patches per epoch");
  t->add_option("--patch", tr.patch, "Patch size");
  t->add_option("--batch", tr.batch, "Batch size");
  t->add_option("--patience", tr.patience, "Early-stopping patience");
  t->add_option("--validation-patches", tr.validation, "Fixed validation patches");
  t->add_option("--lr", tr.lr, "Learning rate");
  t->add_option("--seed", tr.seed, "Training seed");

  TuneArgs tu;
  auto* u = app.add_subcommand("tune", "Grid-search thresholds and write them into the config");
  u->add_option("--data", tu.data, "Directory of slides")->required()->check(CLI::ExistingDirectory);
  u->add_option("--config", tu.config, "Pipeline config JSON (updated in place)")->required()->check(CLI::ExistingFile);
  u->add_option("--split-seed", tu.split_seed, "Slide split seed");
  u->add_option("--step", tu.step, "Grid step");
  u->add_flag("--joint", tu.joint, "Also run the 2-D search as a diagnostic");
  u->add_option("--workers", tu.workers, "Tile workers")->check(CLI::PositiveNumber);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate detection, classification and TCR error");
  e->add_option("--data", ev.data, "Directory of slides")->required()->check(CLI::ExistingDirectory);
  e->add_option("--config", ev.config, "Pipeline config JSON")->required()->check(CLI::ExistingFile);
  e->add_option("--split", ev.split, "train, validation, test, tune or all");
  e->add_option("--split-seed", ev.split_seed, "Slide split seed");
  e->add_option("--workers", ev.workers, "Tile workers")->check(CLI::PositiveNumber);
  e->add_option("--out", ev.out, "Report JSON");

  SweepArgs sw;
  auto* w = app.add_subcommand("sweep", "F1 versus resize factor");
  w->add_option("--data", sw.data, "Directory of slides")->required()->check(CLI::ExistingDirectory);
  w->add_option("--model", sw.models, "FACTOR=WEIGHTS (repeatable)")->required();
  w->add_option("--mode", sw.modes, "det, cls, det+cls (repeatable)");
  w->add_option("--split", sw.split, "Slides to evaluate");
  w->add_option("--split-seed", sw.split_seed, "Slide split seed");
  w->add_option("--t-d", sw.t_d, "Detection threshold")->check(CLI::Range(0.0, 1.0));
  w->add_option("--t-c", sw.t_c, "Classification threshold")->check(CLI::Range(0.0, 1.0));
  w->add_option("--out", sw.out, "CSV output (stdout when omitted)");
  w->add_option("--json", sw.json_out, "JSON output");

  AnalyzeArgs an;
  auto* a = app.add_subcommand("analyze", "Count tumor and normal cells in a slide region");
  a->add_option("--slide", an.slide, "Slide directory")->required()->check(CLI::ExistingDirectory);
  a->add_option("--region", an.region, "X,Y,W,H in level-0 pixels (whole slide when omitted)");
  a->add_option("--config", an.config, "Pipeline config JSON")->required()->check(CLI::ExistingFile);
  a->add_option("--workers", an.workers, "Tile workers")->check(CLI::PositiveNumber);
  a->add_option("--out", an.out, "Result JSON")->required();
  a->add_option("--heatmap-um", an.heatmap_um, "Heatmap cell side in microns")->check(CLI::PositiveNumber);

  ServeArgs sv;
  auto* v = app.add_subcommand("serve", "Run the analysis server");
  v->add_option("--listen", sv.listen, "HOST:PORT");
  v->add_option("--slides", sv.slides, "Slide root directory")->required()->check(CLI::ExistingDirectory);
  v->add_option("--config", sv.config, "Pipeline config JSON")->check(CLI::ExistingFile);
  v->add_option("--workers", sv.workers, "Tile workers per job")->check(CLI::PositiveNumber);
  v->add_option("--jobs", sv.jobs, "Concurrent jobs")->check(CLI::PositiveNumber);
  v->add_option("--state", sv.state, "Journal and result directory");
  v->add_option("--static", sv.static_dir, "Static files for the viewer")->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*s) return run_synth(synth);
    if (*t) return run_train(tr);
    if (*u) return run_tune(tu);
    if (*e) return run_eval(ev);
    if (*w) return run_sweep(sw);
    if (*a) return run_analyze(an);
    if (*v) return run_serve(sv);
  } catch (const CLI::Error& err) {
    return app.exit(err);
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 1;
  }
  return 0;
}
