#include <benchmark/benchmark.h>

#include <filesystem>
#include <random>

#include "tcr/eval/metrics.hpp"
#include "tcr/model/unet.hpp"
#include "tcr/nn/layers.hpp"
#include "tcr/pipeline/pipeline.hpp"
#include "tcr/post/postprocess.hpp"
#include "tcr/slide/synth.hpp"

namespace {

using namespace tcr;

nn::Tensor random_tensor(nn::Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, 1.0f);
  nn::Tensor t(s);
  for (std::size_t i = 0; i < s.size(); ++i) t.data()[i] = d(rng);
  return t;
}

void BM_Conv2dForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), hw = static_cast<int>(state.range(1));
  const auto x = random_tensor({1, c, hw, hw}, 1);
  const auto w = random_tensor({c, c, 3, 3}, 2);
  const std::vector<float> b(static_cast<std::size_t>(c), 0.0f);
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv2d<float>(x, w, b));
  state.SetItemsProcessed(state.iterations() * hw * hw);
}
BENCHMARK(BM_Conv2dForward)->Args({16, 128})->Args({32, 64})->Args({64, 32})->Unit(benchmark::kMillisecond);

void BM_UNetForwardMaps(benchmark::State& state) {
  const model::UNet net(model::ModelConfig::desk(2), 1);
  const int hw = static_cast<int>(state.range(0));
  RgbImage img(hw, hw);
  std::mt19937_64 rng(3);
  for (auto& v : img.pixels) v = static_cast<std::uint8_t>(rng());
  for (auto _ : state) benchmark::DoNotOptimize(net.forward_maps(img));
  state.SetItemsProcessed(state.iterations() * hw * hw);
}
BENCHMARK(BM_UNetForwardMaps)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_UNetTrainStep(benchmark::State& state) {
  model::UNet net(model::ModelConfig::desk(2), 1);
  const auto x = random_tensor({8, 3, 128, 128}, 4);
  for (auto _ : state) {
    const auto logits = net.forward_train(x);
    net.zero_grad();
    benchmark::DoNotOptimize(net.backward(logits));
  }
}
BENCHMARK(BM_UNetTrainStep)->Unit(benchmark::kMillisecond);

void BM_DetectPeaks(benchmark::State& state) {
  DensityMap m(512, 512);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : m.values) v = u(rng);
  for (auto _ : state) benchmark::DoNotOptimize(post::detect_peaks(m, 0.5));
}
BENCHMARK(BM_DetectPeaks)->Unit(benchmark::kMicrosecond);

void BM_GreedyMatch(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<std::int64_t> pos(0, 4000);
  std::vector<eval::Point> d(n), l(n);
  for (auto& p : d) p = {pos(rng), pos(rng)};
  for (auto& p : l) p = {pos(rng), pos(rng)};
  for (auto _ : state) benchmark::DoNotOptimize(eval::greedy_match(d, l, 0.25, 3.2));
}
BENCHMARK(BM_GreedyMatch)->Arg(1000)->Arg(10000)->Unit(benchmark::kMicrosecond);

class SlideBench : public benchmark::Fixture {
 public:
  void SetUp(const benchmark::State&) override {
    if (pyramid) return;
    dir = std::filesystem::temp_directory_path() / "tcr_bench_slide";
    std::filesystem::remove_all(dir);
    slide::SynthParams p;
    p.width = p.height = 1024;
    slide::write_synthetic_slide(p, dir, 256);
    pyramid = std::make_unique<slide::SlidePyramid>(slide::SlidePyramid::open(dir));
  }
  static inline std::filesystem::path dir;
  static inline std::unique_ptr<slide::SlidePyramid> pyramid;
};

BENCHMARK_DEFINE_F(SlideBench, ReadRaster20X)(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(pyramid->read_raster(Rect{0, 0, 512, 512}, 0.5));
}
BENCHMARK_REGISTER_F(SlideBench, ReadRaster20X)->Unit(benchmark::kMillisecond);

BENCHMARK_DEFINE_F(SlideBench, Pipeline)(benchmark::State& state) {
  pipeline::PipelineConfig cfg;
  cfg.detect_classify = {std::make_shared<const model::UNet>(model::ModelConfig::desk(2), 1), 20.0};
  cfg.interior = 256;
  const int workers = static_cast<int>(state.range(0));
  double mm2 = 0.0;
  for (auto _ : state) mm2 += pipeline::run_pipeline(*pyramid, Rect{0, 0, 1024, 1024}, cfg, workers).area_mm2;
  state.counters["mm2_per_s"] = benchmark::Counter(mm2, benchmark::Counter::kIsRate);
}
BENCHMARK_REGISTER_F(SlideBench, Pipeline)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();

}  // namespace

BENCHMARK_MAIN();
