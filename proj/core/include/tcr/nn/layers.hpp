#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "tcr/nn/tensor.hpp"

namespace tcr::nn {

enum class Mode { train, infer };

/// Gradients produced by a layer's backward pass. Shapes mirror the
/// parameter and input shapes exactly; unused members stay empty.
template <typename T>
struct LayerGrads {
  BasicTensor<T> weight;
  BasicTensor<T> bias;
  BasicTensor<T> input;
};

// Convolution with an odd square kernel, stride 1 and zero "same" padding.
// weights: (out, in, k, k); bias: one value per output channel.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                      std::span<const T> bias);
template <typename T>
LayerGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                              const BasicTensor<T>& grad_output);

// 2x2 stride-2 transposed convolution (up-sampling). weights: (in, out, 2, 2).
// Output is exactly twice the input height and width.
template <typename T>
BasicTensor<T> transposed_conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                                 std::span<const T> bias);
template <typename T>
LayerGrads<T> transposed_conv2d_backward(const BasicTensor<T>& input,
                                         const BasicTensor<T>& weights,
                                         const BasicTensor<T>& grad_output);

/// Argmax positions (flat index inside the input plane) recorded by the
/// pooling forward pass.
struct PoolIndices {
  Shape input_shape;
  std::vector<std::uint32_t> argmax;
};

// 2x2 max pooling. Odd extents behave as if the last row/column were
// replicated; output is ceil(h/2) x ceil(w/2). Ties go to the first window
// element in row-major order.
template <typename T>
std::pair<BasicTensor<T>, PoolIndices> maxpool2x2(const BasicTensor<T>& input);
template <typename T>
BasicTensor<T> maxpool2x2_backward(const BasicTensor<T>& grad_output, const PoolIndices& indices);

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

template <typename T>
struct BatchNormStats {
  std::vector<T> running_mean;
  std::vector<T> running_var;

  static BatchNormStats fresh(int channels) {
    return {std::vector<T>(channels, T{0}), std::vector<T>(channels, T{1})};
  }
};

template <typename T>
struct BatchNormCache {
  BasicTensor<T> normalized;
  std::vector<T> inv_std;
};

/// Train mode normalizes with batch statistics, updates `stats` with momentum
/// 0.1 (unbiased variance) and fills `cache` when given.
template <typename T>
BasicTensor<T> batchnorm2d_train(const BasicTensor<T>& input, std::span<const T> gamma,
                                 std::span<const T> beta, BatchNormStats<T>& stats,
                                 BatchNormCache<T>* cache = nullptr);
template <typename T>
BasicTensor<T> batchnorm2d_infer(const BasicTensor<T>& input, std::span<const T> gamma,
                                 std::span<const T> beta, const BatchNormStats<T>& stats);
/// weight = d/dgamma, bias = d/dbeta, input = d/dx.
template <typename T>
LayerGrads<T> batchnorm2d_backward(const BasicTensor<T>& grad_output, std::span<const T> gamma,
                                   const BatchNormCache<T>& cache);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input);
/// `input` is the forward input (gradient passes where input > 0).
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_output);

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& input);
/// `output` is the forward output sigma(x).
template <typename T>
BasicTensor<T> sigmoid_backward(const BasicTensor<T>& output, const BasicTensor<T>& grad_output);

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& first, const BasicTensor<T>& second);
/// Splits a concatenated gradient back into (first, second) parts.
template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> concat_channels_backward(
    const BasicTensor<T>& grad_output, int first_channels);

/// Keeps the top-left (h, w) window of every plane.
template <typename T>
BasicTensor<T> crop(const BasicTensor<T>& input, int h, int w);
template <typename T>
BasicTensor<T> crop_backward(const BasicTensor<T>& grad_output, const Shape& input_shape);

template <typename T>
struct LossResult {
  double loss = 0.0;
  BasicTensor<T> grad;  ///< dLoss/dLogits
};

/// Mean binary cross-entropy over all elements, fused with the sigmoid:
/// max(x,0) - x*y + log1p(exp(-|x|)). Targets must lie in [0,1].
template <typename T>
LossResult<T> bce_with_sigmoid(const BasicTensor<T>& logits, const BasicTensor<T>& targets);

}  // namespace tcr::nn
