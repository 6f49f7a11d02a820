#pragma once

// Independent reference implementations used only by tests. Each one is a
// direct transcription of a definition (nested loops, window scans, finite
// differences) and deliberately shares no code with the library paths it
// checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "tcr/nn/tensor.hpp"

namespace tcr::testing {

inline nn::TensorD random_tensor(nn::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                 double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  nn::TensorD t(shape);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

inline nn::Tensor random_tensor_f(nn::Shape shape, std::mt19937_64& rng, float lo = -1.0f,
                                  float hi = 1.0f) {
  std::uniform_real_distribution<float> u(lo, hi);
  nn::Tensor t(shape);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

/// Same-padded stride-1 convolution by nested loops in 64-bit.
template <typename T>
nn::TensorD conv2d_reference(const nn::BasicTensor<T>& x, const nn::BasicTensor<T>& w,
                             const std::vector<double>& bias) {
  const auto& s = x.shape();
  const auto& k = w.shape();
  const int pad = k.h / 2;
  nn::TensorD y(nn::Shape{s.n, k.n, s.h, s.w});
  for (int n = 0; n < s.n; ++n)
    for (int o = 0; o < k.n; ++o)
      for (int i = 0; i < s.h; ++i)
        for (int j = 0; j < s.w; ++j) {
          double acc = bias[o];
          for (int c = 0; c < s.c; ++c)
            for (int a = 0; a < k.h; ++a)
              for (int b = 0; b < k.w; ++b) {
                const int yy = i + a - pad;
                const int xx = j + b - pad;
                if (yy < 0 || yy >= s.h || xx < 0 || xx >= s.w) continue;
                acc += static_cast<double>(w.at(o, c, a, b)) * x.at(n, c, yy, xx);
              }
          y.at(n, o, i, j) = acc;
        }
  return y;
}

/// Stride-2, 2x2 convolution with weights laid out (in, out, 2, 2): maps a
/// (n, out, 2h, 2w) tensor to (n, in, h, w). This is the adjoint of the
/// transposed convolution by definition.
template <typename T>
nn::TensorD strided_conv2x2_reference(const nn::BasicTensor<T>& y, const nn::BasicTensor<T>& w) {
  const auto& s = y.shape();
  const auto& k = w.shape();
  nn::TensorD x(nn::Shape{s.n, k.n, s.h / 2, s.w / 2});
  for (int n = 0; n < s.n; ++n)
    for (int ci = 0; ci < k.n; ++ci)
      for (int i = 0; i < s.h / 2; ++i)
        for (int j = 0; j < s.w / 2; ++j) {
          double acc = 0.0;
          for (int co = 0; co < k.c; ++co)
            for (int a = 0; a < 2; ++a)
              for (int b = 0; b < 2; ++b)
                acc += static_cast<double>(w.at(ci, co, a, b)) * y.at(n, co, 2 * i + a, 2 * j + b);
          x.at(n, ci, i, j) = acc;
        }
  return x;
}

template <typename A, typename B>
double inner_product(const nn::BasicTensor<A>& a, const nn::BasicTensor<B>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

/// Central finite differences of a scalar function with respect to every
/// element of `x`.
inline nn::TensorD numeric_gradient(const std::function<double(const nn::TensorD&)>& f,
                                    nn::TensorD x, double h = 1e-5) {
  nn::TensorD g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Largest element-wise relative error |a-n| / max(|a|, |n|, floor).
inline double max_relative_error(const nn::TensorD& analytic, const nn::TensorD& numeric,
                                 double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i];
    const double n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

}  // namespace tcr::testing
