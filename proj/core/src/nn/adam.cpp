#include "tcr/nn/adam.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace tcr::nn {

template <typename T>
void adam_step(std::span<BasicParameter<T>> params, AdamState<T>& state,
               const AdamConfig& config) {
  if (!(config.lr > 0.0)) {
    throw std::invalid_argument("adam_step: learning rate must be positive, got " +
                                std::to_string(config.lr));
  }
  if (state.first_moment.empty() && state.step == 0) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.value.shape());
      state.second_moment.emplace_back(p.value.shape());
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw std::invalid_argument("adam_step: optimizer state tracks " +
                                std::to_string(state.first_moment.size()) +
                                " tensors but got " + std::to_string(params.size()));
  }
  ++state.step;
  const double b1 = config.beta1;
  const double b2 = config.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto value = params[i].value.data();
    auto grad = params[i].grad.data();
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    if (grad.size() != value.size() || m.size() != value.size()) {
      throw std::invalid_argument("adam_step: gradient/moment shape mismatch for " +
                                  params[i].name);
    }
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = grad[j];
      const double mj = b1 * m[j] + (1.0 - b1) * g;
      const double vj = b2 * v[j] + (1.0 - b2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double mhat = mj / correction1;
      const double vhat = vj / correction2;
      value[j] = static_cast<T>(value[j] - config.lr * mhat / (std::sqrt(vhat) + config.eps));
    }
  }
}

template void adam_step(std::span<BasicParameter<float>>, AdamState<float>&, const AdamConfig&);
template void adam_step(std::span<BasicParameter<double>>, AdamState<double>&,
                        const AdamConfig&);

}  // namespace tcr::nn
