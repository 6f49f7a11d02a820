#include "tcr/model/unet.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace tcr::model {

ModelConfig ModelConfig::desk(int out_maps) {
  ModelConfig c;
  c.levels = 3;
  c.base_channels = 16;
  c.out_maps = out_maps;
  return c;
}

ModelConfig ModelConfig::large(int out_maps) {
  ModelConfig c;
  c.levels = 4;
  c.base_channels = 64;
  c.out_maps = out_maps;
  c.convs_per_level = 2;
  c.deep_extra_convs = 1;
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) {
    throw std::invalid_argument("invalid model config: " + what);
  };
  if (levels < 1) fail("levels must be >= 1");
  if (levels > 12) fail("levels " + std::to_string(levels) + " leaves no spatial extent");
  if (base_channels < 1) fail("base_channels must be >= 1");
  if (in_channels < 1) fail("in_channels must be >= 1");
  if (out_maps < 1) fail("out_maps must be >= 1");
  if (convs_per_level < 1) fail("convs_per_level must be >= 1");
  if (deep_extra_convs < 0) fail("deep_extra_convs must be >= 0");
  if (static_cast<long long>(base_channels) << levels > (1LL << 20)) {
    fail("channel count overflows at the bottleneck");
  }
}

int ModelConfig::convs_at_level(int level) const {
  return convs_per_level + (level == levels - 1 ? deep_extra_convs : 0);
}

int receptive_field(std::span<const LayerGeometry> layers) {
  int r = 1;
  int jump = 1;
  for (const auto& l : layers) {
    if (l.kernel < 1 || l.stride < 1) throw std::invalid_argument("bad layer geometry");
    r += (l.kernel - 1) * jump;
    jump *= l.stride;
  }
  return r;
}

std::vector<LayerGeometry> encoder_geometry(const ModelConfig& config) {
  config.validate();
  std::vector<LayerGeometry> layers;
  for (int level = 0; level < config.levels; ++level) {
    for (int i = 0; i < config.convs_at_level(level); ++i) layers.push_back({3, 1});
    layers.push_back({2, 2});
  }
  for (int i = 0; i < config.bottleneck_convs(); ++i) layers.push_back({3, 1});
  return layers;
}

int receptive_field(const ModelConfig& config) {
  return receptive_field(encoder_geometry(config));
}

int output_receptive_field(const ModelConfig& config) {
  int r = receptive_field(config);
  int jump = 1 << config.levels;
  for (int level = config.levels - 1; level >= 0; --level) {
    jump /= 2;  // each output of a 2x2/2 transposed conv reads one input pixel
    for (int i = 0; i < config.convs_at_level(level); ++i) r += 2 * jump;
  }
  return r;
}

template <typename T>
template <typename Rng>
std::size_t BasicUNet<T>::add_param(std::string name, nn::Shape shape, double init_std, T fill,
                                    Rng& rng) {
  nn::BasicParameter<T> p{std::move(name), nn::BasicTensor<T>(shape, fill),
                          nn::BasicTensor<T>(shape)};
  if (init_std > 0.0) {
    std::normal_distribution<double> normal(0.0, init_std);
    for (auto& v : p.value.data()) v = static_cast<T>(normal(rng));
  }
  params_.push_back(std::move(p));
  return params_.size() - 1;
}

template <typename T>
template <typename Rng>
typename BasicUNet<T>::ConvUnit BasicUNet<T>::add_unit(const std::string& prefix, int in_ch,
                                                       int out_ch, Rng& rng) {
  ConvUnit u{};
  const double std = std::sqrt(2.0 / (in_ch * 9.0));
  u.weight = add_param(prefix + ".conv.weight", nn::Shape{out_ch, in_ch, 3, 3}, std, T{0}, rng);
  u.bias = add_param(prefix + ".conv.bias", nn::Shape{1, out_ch, 1, 1}, 0.0, T{0}, rng);
  u.gamma = add_param(prefix + ".bn.gamma", nn::Shape{1, out_ch, 1, 1}, 0.0, T{1}, rng);
  u.beta = add_param(prefix + ".bn.beta", nn::Shape{1, out_ch, 1, 1}, 0.0, T{0}, rng);
  u.stats = stats_.size();
  stats_.push_back(nn::BatchNormStats<T>::fresh(out_ch));
  stat_names_.push_back(prefix + ".bn");
  return u;
}

template <typename T>
BasicUNet<T>::BasicUNet(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  int in_ch = config_.in_channels;
  for (int level = 0; level < config_.levels; ++level) {
    Stage stage;
    const int ch = config_.channels_at(level);
    for (int i = 0; i < config_.convs_at_level(level); ++i) {
      stage.units.push_back(
          add_unit("enc" + std::to_string(level) + "." + std::to_string(i), in_ch, ch, rng));
      in_ch = ch;
    }
    encoder_.push_back(std::move(stage));
  }
  {
    const int ch = config_.channels_at(config_.levels);
    for (int i = 0; i < config_.bottleneck_convs(); ++i) {
      bottleneck_.units.push_back(add_unit("bottleneck." + std::to_string(i), in_ch, ch, rng));
      in_ch = ch;
    }
  }
  decoder_.resize(config_.levels);
  for (int level = config_.levels - 1; level >= 0; --level) {
    Stage& stage = decoder_[level];
    const int ch = config_.channels_at(level);
    const std::string prefix = "dec" + std::to_string(level);
    stage.up_weight = add_param(prefix + ".up.weight", nn::Shape{in_ch, ch, 2, 2},
                                std::sqrt(2.0 / in_ch), T{0}, rng);
    stage.up_bias = add_param(prefix + ".up.bias", nn::Shape{1, ch, 1, 1}, 0.0, T{0}, rng);
    int unit_in = 2 * ch;  // [skip, upsampled]
    for (int i = 0; i < config_.convs_at_level(level); ++i) {
      stage.units.push_back(add_unit(prefix + "." + std::to_string(i), unit_in, ch, rng));
      unit_in = ch;
    }
    in_ch = ch;
  }
  head_weight_ = add_param("head.weight", nn::Shape{config_.out_maps, in_ch, 1, 1},
                           std::sqrt(2.0 / in_ch), T{0}, rng);
  head_bias_ = add_param("head.bias", nn::Shape{1, config_.out_maps, 1, 1}, 0.0, T{0}, rng);
}

template <typename T>
std::int64_t BasicUNet<T>::parameter_count() const {
  return nn::parameter_count(parameters());
}

template <typename T>
void BasicUNet<T>::zero_grad() {
  for (auto& p : params_) p.grad.fill(T{0});
}

template <typename T>
void BasicUNet<T>::check_input(const nn::Shape& shape) const {
  if (shape.c != config_.in_channels) {
    throw std::invalid_argument("model expects " + std::to_string(config_.in_channels) +
                                " input channels, got shape " + shape.str());
  }
  const int min = config_.min_input_size();
  if (shape.h < min || shape.w < min || shape.n < 1) {
    throw std::invalid_argument("input " + shape.str() + " is smaller than the minimum " +
                                std::to_string(min) + "x" + std::to_string(min) +
                                " for levels=" + std::to_string(config_.levels));
  }
}

template <typename T>
nn::BasicTensor<T> BasicUNet<T>::run_units(const Stage& stage, nn::BasicTensor<T> x,
                                           StageCache* cache,
                                           std::vector<nn::BatchNormStats<T>>* train_stats) const {
  if (cache) cache->units.resize(stage.units.size());
  for (std::size_t i = 0; i < stage.units.size(); ++i) {
    const ConvUnit& u = stage.units[i];
    auto z = nn::conv2d<T>(x, params_[u.weight].value, params_[u.bias].value.data());
    nn::BasicTensor<T> normalized;
    if (train_stats) {
      normalized = nn::batchnorm2d_train<T>(z, params_[u.gamma].value.data(),
                                            params_[u.beta].value.data(),
                                            (*train_stats)[u.stats],
                                            cache ? &cache->units[i].bn : nullptr);
    } else {
      normalized = nn::batchnorm2d_infer<T>(z, params_[u.gamma].value.data(),
                                            params_[u.beta].value.data(), stats_[u.stats]);
    }
    auto activated = nn::relu(normalized);
    if (cache) {
      cache->units[i].input = std::move(x);
      cache->units[i].normalized_out = std::move(normalized);
    }
    x = std::move(activated);
  }
  return x;
}

template <typename T>
nn::BasicTensor<T> BasicUNet<T>::forward_impl(const nn::BasicTensor<T>& input,
                                              TrainContext* train) const {
  check_input(input.shape());
  auto* stats = train ? train->stats : nullptr;
  std::vector<nn::BasicTensor<T>> skips;
  skips.reserve(config_.levels);
  nn::BasicTensor<T> x = input;
  for (int level = 0; level < config_.levels; ++level) {
    StageCache* cache = train ? &(*train->encoder)[level] : nullptr;
    x = run_units(encoder_[level], std::move(x), cache, stats);
    auto [pooled, indices] = nn::maxpool2x2(x);
    if (cache) cache->pool = std::move(indices);
    skips.push_back(std::move(x));
    x = std::move(pooled);
  }
  x = run_units(bottleneck_, std::move(x), train ? train->bottleneck : nullptr, stats);
  for (int level = config_.levels - 1; level >= 0; --level) {
    const Stage& stage = decoder_[level];
    StageCache* cache = train ? &(*train->decoder)[level] : nullptr;
    auto up = nn::transposed_conv2d<T>(x, params_[stage.up_weight].value,
                                       params_[stage.up_bias].value.data());
    const nn::BasicTensor<T>& skip = skips[level];
    if (cache) {
      cache->up_input = std::move(x);
      cache->up_shape = up.shape();
      cache->skip_channels = skip.shape().c;
    }
    up = nn::crop(up, skip.shape().h, skip.shape().w);
    x = run_units(stage, nn::concat_channels(skip, up), cache, stats);
  }
  auto out = nn::conv2d<T>(x, params_[head_weight_].value, params_[head_bias_].value.data());
  if (train) *train->head_input = std::move(x);
  return out;
}

template <typename T>
nn::BasicTensor<T> BasicUNet<T>::forward_train(const nn::BasicTensor<T>& input) {
  enc_cache_.assign(config_.levels, StageCache{});
  dec_cache_.assign(config_.levels, StageCache{});
  bottleneck_cache_ = StageCache{};
  TrainContext ctx{&enc_cache_, &bottleneck_cache_, &dec_cache_, &head_input_, &stats_};
  auto out = forward_impl(input, &ctx);
  has_cache_ = true;
  return out;
}

template <typename T>
nn::BasicTensor<T> BasicUNet<T>::logits(const nn::BasicTensor<T>& input) const {
  return forward_impl(input, nullptr);
}

template <typename T>
nn::BasicTensor<T> BasicUNet<T>::backward_units(const Stage& stage, StageCache& cache,
                                                nn::BasicTensor<T> grad) {
  for (std::size_t i = stage.units.size(); i-- > 0;) {
    const ConvUnit& u = stage.units[i];
    UnitCache& c = cache.units[i];
    grad = nn::relu_backward(c.normalized_out, grad);
    auto bn = nn::batchnorm2d_backward<T>(grad, params_[u.gamma].value.data(), c.bn);
    auto& gamma_grad = params_[u.gamma].grad;
    auto& beta_grad = params_[u.beta].grad;
    for (std::size_t k = 0; k < gamma_grad.size(); ++k) {
      gamma_grad[k] += bn.weight[k];
      beta_grad[k] += bn.bias[k];
    }
    auto conv = nn::conv2d_backward<T>(c.input, params_[u.weight].value, bn.input);
    auto& wg = params_[u.weight].grad;
    for (std::size_t k = 0; k < wg.size(); ++k) wg[k] += conv.weight[k];
    auto& bg = params_[u.bias].grad;
    for (std::size_t k = 0; k < bg.size(); ++k) bg[k] += conv.bias[k];
    grad = std::move(conv.input);
  }
  return grad;
}

namespace {
template <typename T>
void accumulate(nn::BasicTensor<T>& dst, const nn::BasicTensor<T>& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}
}  // namespace

template <typename T>
nn::BasicTensor<T> BasicUNet<T>::backward(const nn::BasicTensor<T>& grad_logits) {
  if (!has_cache_) throw std::logic_error("backward() called without forward_train()");
  auto head = nn::conv2d_backward<T>(head_input_, params_[head_weight_].value, grad_logits);
  accumulate(params_[head_weight_].grad, head.weight);
  accumulate(params_[head_bias_].grad, head.bias);
  nn::BasicTensor<T> grad = std::move(head.input);

  std::vector<nn::BasicTensor<T>> skip_grads(config_.levels);
  for (int level = 0; level < config_.levels; ++level) {
    const Stage& stage = decoder_[level];
    StageCache& cache = dec_cache_[level];
    grad = backward_units(stage, cache, std::move(grad));
    auto [skip_grad, up_grad] = nn::concat_channels_backward(grad, cache.skip_channels);
    skip_grads[level] = std::move(skip_grad);
    up_grad = nn::crop_backward(up_grad, cache.up_shape);
    auto up = nn::transposed_conv2d_backward<T>(cache.up_input, params_[stage.up_weight].value,
                                                up_grad);
    accumulate(params_[stage.up_weight].grad, up.weight);
    accumulate(params_[stage.up_bias].grad, up.bias);
    grad = std::move(up.input);
  }
  grad = backward_units(bottleneck_, bottleneck_cache_, std::move(grad));
  for (int level = config_.levels - 1; level >= 0; --level) {
    StageCache& cache = enc_cache_[level];
    grad = nn::maxpool2x2_backward(grad, cache.pool);
    accumulate(grad, skip_grads[level]);
    grad = backward_units(encoder_[level], cache, std::move(grad));
  }
  return grad;
}

template <typename T>
std::vector<DensityMap> BasicUNet<T>::forward_maps(const RgbImage& image) const {
  auto probs = nn::sigmoid(logits(image_to_tensor<T>(image)));
  std::vector<DensityMap> maps;
  const std::size_t plane = probs.shape().plane();
  for (int k = 0; k < config_.out_maps; ++k) {
    DensityMap m(image.width, image.height);
    const T* src = probs.plane(0, k);
    for (std::size_t i = 0; i < plane; ++i) m.values[i] = static_cast<float>(src[i]);
    maps.push_back(std::move(m));
  }
  return maps;
}

template <typename T>
nn::BasicTensor<T> image_to_tensor(const RgbImage& image) {
  nn::BasicTensor<T> t(nn::Shape{1, 3, image.height, image.width});
  const std::size_t plane = static_cast<std::size_t>(image.width) * image.height;
  T* r = t.plane(0, 0);
  T* g = t.plane(0, 1);
  T* b = t.plane(0, 2);
  const std::uint8_t* px = image.pixels.data();
  for (std::size_t i = 0; i < plane; ++i) {
    r[i] = static_cast<T>(px[3 * i] / 255.0);
    g[i] = static_cast<T>(px[3 * i + 1] / 255.0);
    b[i] = static_cast<T>(px[3 * i + 2] / 255.0);
  }
  return t;
}

template class BasicUNet<float>;
template class BasicUNet<double>;
template nn::BasicTensor<float> image_to_tensor<float>(const RgbImage&);
template nn::BasicTensor<double> image_to_tensor<double>(const RgbImage&);

}  // namespace tcr::model
