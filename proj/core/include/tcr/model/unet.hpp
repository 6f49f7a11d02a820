#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tcr/image.hpp"
#include "tcr/nn/layers.hpp"
#include "tcr/nn/tensor.hpp"

namespace tcr::model {

/// Encoder-decoder topology. Channels double per level (base, 2*base, ...).
struct ModelConfig {
  int levels = 3;
  int base_channels = 16;
  int in_channels = 3;
  int out_maps = 2;  ///< 2 = detection + classification, 1 = segmentation
  int convs_per_level = 2;
  /// Extra 3x3 convs on the deepest encoder level and on the bottleneck
  /// (mirrored on the deepest decoder level).
  int deep_extra_convs = 0;

  /// levels=3, base=16: trains on a CPU in minutes.
  static ModelConfig desk(int out_maps = 2);
  /// levels=4, base=64, one extra deep conv: receptive field 188.
  static ModelConfig large(int out_maps = 2);

  void validate() const;
  [[nodiscard]] int convs_at_level(int level) const;
  [[nodiscard]] int bottleneck_convs() const { return convs_per_level + deep_extra_convs; }
  [[nodiscard]] int channels_at(int level) const { return base_channels << level; }
  /// Smallest accepted input extent: the bottleneck keeps at least one pixel.
  [[nodiscard]] int min_input_size() const { return 1 << levels; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerGeometry {
  int kernel = 3;
  int stride = 1;
};

/// Receptive field of a layer stack by the recurrence r += (k-1)*jump,
/// jump *= stride.
int receptive_field(std::span<const LayerGeometry> layers);

/// Encoder layers up to and including the bottleneck.
std::vector<LayerGeometry> encoder_geometry(const ModelConfig& config);

/// Receptive field of one bottleneck activation.
int receptive_field(const ModelConfig& config);

/// Extent of input influencing one output-map pixel (encoder, bottleneck and
/// decoder). Tiling halos must cover half of this for exact crop equality.
int output_receptive_field(const ModelConfig& config);

template <typename T>
class BasicUNet {
 public:
  BasicUNet(const ModelConfig& config, std::uint64_t seed);

  [[nodiscard]] const ModelConfig& config() const { return config_; }

  [[nodiscard]] std::span<nn::BasicParameter<T>> parameters() { return params_; }
  [[nodiscard]] std::span<const nn::BasicParameter<T>> parameters() const { return params_; }
  [[nodiscard]] std::vector<nn::BatchNormStats<T>>& batchnorm_stats() { return stats_; }
  [[nodiscard]] const std::vector<nn::BatchNormStats<T>>& batchnorm_stats() const {
    return stats_;
  }
  /// Names of the batch-norm layers, parallel to batchnorm_stats().
  [[nodiscard]] const std::vector<std::string>& batchnorm_names() const { return stat_names_; }

  /// Exact count of weight, bias, gamma and beta elements.
  [[nodiscard]] std::int64_t parameter_count() const;

  /// Train-mode forward over a (n, in_channels, h, w) batch. Uses batch
  /// statistics, updates running stats and keeps activations for backward().
  nn::BasicTensor<T> forward_train(const nn::BasicTensor<T>& input);

  /// Back-propagates dLoss/dLogits through the last forward_train() call and
  /// accumulates parameter gradients. Returns dLoss/dInput.
  nn::BasicTensor<T> backward(const nn::BasicTensor<T>& grad_logits);

  void zero_grad();

  /// Inference-mode logits. Reentrant: safe to call concurrently.
  [[nodiscard]] nn::BasicTensor<T> logits(const nn::BasicTensor<T>& input) const;

  /// Sigmoid maps for one RGB image scaled to [0,1]; same size as the image.
  /// Order: [detection, classification] or [segmentation].
  [[nodiscard]] std::vector<DensityMap> forward_maps(const RgbImage& image) const;

 private:
  struct ConvUnit {
    std::size_t weight, bias, gamma, beta, stats;
  };
  struct UnitCache {
    nn::BasicTensor<T> input;
    nn::BatchNormCache<T> bn;
    nn::BasicTensor<T> normalized_out;
  };
  struct Stage {
    std::vector<ConvUnit> units;
    std::size_t up_weight = 0, up_bias = 0;  // decoder stages only
  };
  struct StageCache {
    std::vector<UnitCache> units;
    nn::PoolIndices pool;         // encoder
    nn::BasicTensor<T> up_input;  // decoder
    nn::Shape up_shape;           // decoder, before crop
    int skip_channels = 0;
  };

  template <typename Rng>
  std::size_t add_param(std::string name, nn::Shape shape, double init_std, T fill, Rng& rng);
  template <typename Rng>
  ConvUnit add_unit(const std::string& prefix, int in_ch, int out_ch, Rng& rng);

  // Mutable training context threaded through the shared forward path;
  // null for inference.
  struct TrainContext {
    std::vector<StageCache>* encoder;
    StageCache* bottleneck;
    std::vector<StageCache>* decoder;
    nn::BasicTensor<T>* head_input;
    std::vector<nn::BatchNormStats<T>>* stats;
  };

  nn::BasicTensor<T> run_units(const Stage& stage, nn::BasicTensor<T> x, StageCache* cache,
                               std::vector<nn::BatchNormStats<T>>* train_stats) const;
  nn::BasicTensor<T> backward_units(const Stage& stage, StageCache& cache,
                                    nn::BasicTensor<T> grad);
  nn::BasicTensor<T> forward_impl(const nn::BasicTensor<T>& input, TrainContext* train) const;
  void check_input(const nn::Shape& shape) const;

  ModelConfig config_;
  std::vector<nn::BasicParameter<T>> params_;
  std::vector<nn::BatchNormStats<T>> stats_;
  std::vector<std::string> stat_names_;
  std::vector<Stage> encoder_;
  Stage bottleneck_;
  std::vector<Stage> decoder_;
  std::size_t head_weight_ = 0, head_bias_ = 0;

  // Activations of the last forward_train().
  std::vector<StageCache> enc_cache_;
  StageCache bottleneck_cache_;
  std::vector<StageCache> dec_cache_;
  nn::BasicTensor<T> head_input_;
  bool has_cache_ = false;
};

using UNet = BasicUNet<float>;

/// Scales an 8-bit RGB image into a (1, 3, h, w) tensor in [0,1].
template <typename T = float>
nn::BasicTensor<T> image_to_tensor(const RgbImage& image);

}  // namespace tcr::model
