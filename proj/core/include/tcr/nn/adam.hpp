#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tcr/nn/tensor.hpp"

namespace tcr::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<BasicTensor<T>> first_moment;
  std::vector<BasicTensor<T>> second_moment;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update over every parameter, using each
/// parameter's accumulated `grad`. Moments are created on the first call.
template <typename T>
void adam_step(std::span<BasicParameter<T>> params, AdamState<T>& state,
               const AdamConfig& config);

}  // namespace tcr::nn
