#include "tcr/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

#include "blas.hpp"

namespace tcr::nn {
namespace {

[[noreturn]] void shape_error(const char* op, const std::string& what, const Shape& a,
                              const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": " + what + " (got " + a.str() + " and " +
                              b.str() + ")");
}

template <typename T>
BasicTensor<T> bias_tensor(int channels) {
  return BasicTensor<T>(Shape{1, channels, 1, 1});
}

// Pixels per GEMM call. Forward passes always multiply full blocks (the tail
// is zero-padded) so every pixel goes through an identically shaped GEMM and
// results do not depend on image extent or pixel position.
constexpr int kColumnBlock = 384;

// Unfolds flat pixels [p0, p1) of one sample (c, h, w) into (c*k*k) rows of
// `ld` columns with zero padding; columns past p1 - p0 are zeroed.
template <typename T>
void im2col(const T* src, int channels, int h, int w, int k, int p0, int p1, T* col, int ld) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    const T* plane = src + c * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * ld;
        const int dx = kx - pad;
        for (int p = p0; p < p1;) {
          const int y = p / w;
          const int x0 = p % w;
          const int x1 = std::min(w, x0 + (p1 - p));
          T* out = row + (p - p0) - x0;
          const int sy = y + ky - pad;
          const int lo = std::max(x0, -dx);
          const int hi = std::min(x1, w - dx);
          if (sy < 0 || sy >= h || lo >= hi) {
            std::fill(out + x0, out + x1, T{0});
          } else {
            const T* in = plane + static_cast<std::size_t>(sy) * w + dx;
            std::fill(out + x0, out + lo, T{0});
            std::memcpy(out + lo, in + lo, sizeof(T) * (hi - lo));
            std::fill(out + hi, out + x1, T{0});
          }
          p += x1 - x0;
        }
        std::fill(row + (p1 - p0), row + ld, T{0});
      }
    }
  }
}

// Adjoint of im2col for the same pixel range: accumulates into (c, h, w).
template <typename T>
void col2im(const T* col, int channels, int h, int w, int k, int p0, int p1, int ld, T* dst) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    T* plane = dst + c * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * ld;
        const int dx = kx - pad;
        for (int p = p0; p < p1;) {
          const int y = p / w;
          const int x0 = p % w;
          const int x1 = std::min(w, x0 + (p1 - p));
          const T* in = row + (p - p0) - x0;
          const int sy = y + ky - pad;
          const int lo = std::max(x0, -dx);
          const int hi = std::min(x1, w - dx);
          if (sy >= 0 && sy < h) {
            T* out = plane + static_cast<std::size_t>(sy) * w + dx;
            for (int x = lo; x < hi; ++x) out[x] += in[x];
          }
          p += x1 - x0;
        }
      }
    }
  }
}

// Copies flat pixels [p0, p1) of every channel into a zero-padded block.
template <typename T>
void gather_block(const T* src, int channels, std::size_t hw, int p0, int p1, T* block, int ld) {
  for (int c = 0; c < channels; ++c) {
    T* row = block + static_cast<std::size_t>(c) * ld;
    std::memcpy(row, src + c * hw + p0, sizeof(T) * (p1 - p0));
    std::fill(row + (p1 - p0), row + ld, T{0});
  }
}

template <typename T>
void check_conv_shapes(const char* op, const BasicTensor<T>& input,
                       const BasicTensor<T>& weights) {
  const Shape& s = input.shape();
  const Shape& k = weights.shape();
  if (k.c != s.c) shape_error(op, "kernel in_channels must equal input channels", s, k);
  if (k.h != k.w || k.h % 2 == 0) shape_error(op, "kernel must be square with odd size", s, k);
  if (s.h <= 0 || s.w <= 0 || s.n <= 0) shape_error(op, "empty input", s, k);
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                      std::span<const T> bias) {
  check_conv_shapes("conv2d", input, weights);
  const Shape& s = input.shape();
  const Shape& ks = weights.shape();
  if (bias.size() != static_cast<std::size_t>(ks.n)) {
    throw std::invalid_argument("conv2d: bias length " + std::to_string(bias.size()) +
                                " does not match out_channels " + std::to_string(ks.n));
  }
  const int k = ks.h;
  const int kdim = s.c * k * k;
  const int hw = s.h * s.w;
  constexpr int B = kColumnBlock;
  BasicTensor<T> out(Shape{s.n, ks.n, s.h, s.w});
  std::vector<T> col(static_cast<std::size_t>(kdim) * B);
  std::vector<T> acc(static_cast<std::size_t>(ks.n) * B);
  for (int n = 0; n < s.n; ++n) {
    T* dst = out.plane(n, 0);
    for (int p0 = 0; p0 < hw; p0 += B) {
      const int p1 = std::min(hw, p0 + B);
      if (k == 1) {
        gather_block(input.plane(n, 0), s.c, hw, p0, p1, col.data(), B);
      } else {
        im2col(input.plane(n, 0), s.c, s.h, s.w, k, p0, p1, col.data(), B);
      }
      for (int o = 0; o < ks.n; ++o) std::fill_n(acc.data() + o * B, B, bias[o]);
      detail::gemm(false, false, ks.n, B, kdim, T{1}, weights.raw(), kdim, col.data(), B, T{1},
                   acc.data(), B);
      for (int o = 0; o < ks.n; ++o) {
        std::memcpy(dst + static_cast<std::size_t>(o) * hw + p0, acc.data() + o * B,
                    sizeof(T) * (p1 - p0));
      }
    }
  }
  return out;
}

template <typename T>
LayerGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                              const BasicTensor<T>& grad_output) {
  check_conv_shapes("conv2d_backward", input, weights);
  const Shape& s = input.shape();
  const Shape& ks = weights.shape();
  const Shape expected{s.n, ks.n, s.h, s.w};
  if (grad_output.shape() != expected) {
    shape_error("conv2d_backward", "grad_output shape mismatch", grad_output.shape(), expected);
  }
  const int k = ks.h;
  const int kdim = s.c * k * k;
  const int hw = s.h * s.w;
  LayerGrads<T> g{BasicTensor<T>(ks), bias_tensor<T>(ks.n), BasicTensor<T>(s)};
  constexpr int B = kColumnBlock;
  std::vector<T> col(static_cast<std::size_t>(kdim) * B);
  std::vector<T> dcol(col.size());
  for (int n = 0; n < s.n; ++n) {
    const T* dy = grad_output.plane(n, 0);
    for (int o = 0; o < ks.n; ++o) {
      double acc = 0.0;
      for (int i = 0; i < hw; ++i) acc += dy[o * hw + i];
      g.bias[o] += static_cast<T>(acc);
    }
    for (int p0 = 0; p0 < hw; p0 += B) {
      const int p1 = std::min(hw, p0 + B);
      const int cols = p1 - p0;
      const T* dy_block = dy + p0;
      const T* src;
      int ld;
      if (k == 1) {
        src = input.plane(n, 0) + p0;
        ld = hw;
      } else {
        im2col(input.plane(n, 0), s.c, s.h, s.w, k, p0, p1, col.data(), cols);
        src = col.data();
        ld = cols;
      }
      // dW += dY * col^T
      detail::gemm(false, true, ks.n, kdim, cols, T{1}, dy_block, hw, src, ld, T{1},
                   g.weight.raw(), kdim);
      // dcol = W^T * dY
      if (k == 1) {
        detail::gemm(true, false, kdim, cols, ks.n, T{1}, weights.raw(), kdim, dy_block, hw, T{0},
                     g.input.plane(n, 0) + p0, hw);
      } else {
        detail::gemm(true, false, kdim, cols, ks.n, T{1}, weights.raw(), kdim, dy_block, hw, T{0},
                     dcol.data(), cols);
        col2im(dcol.data(), s.c, s.h, s.w, k, p0, p1, cols, g.input.plane(n, 0));
      }
    }
  }
  return g;
}

template <typename T>
BasicTensor<T> transposed_conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                                 std::span<const T> bias) {
  const Shape& s = input.shape();
  const Shape& ks = weights.shape();
  if (s.n <= 0 || s.c <= 0 || s.h <= 0 || s.w <= 0) {
    shape_error("transposed_conv2d", "non-positive input extent", s, ks);
  }
  if (ks.n != s.c || ks.h != 2 || ks.w != 2) {
    shape_error("transposed_conv2d", "kernel must be (in_channels, out, 2, 2)", s, ks);
  }
  if (bias.size() != static_cast<std::size_t>(ks.c)) {
    throw std::invalid_argument("transposed_conv2d: bias length mismatch");
  }
  const int cout = ks.c;
  const int hw = s.h * s.w;
  const int ow = 2 * s.w;
  BasicTensor<T> out(Shape{s.n, cout, 2 * s.h, 2 * s.w});
  constexpr int B = kColumnBlock;
  const int stride = (hw + B - 1) / B * B;
  std::vector<T> cols(static_cast<std::size_t>(cout) * 4 * stride);
  std::vector<T> block(static_cast<std::size_t>(s.c) * B);
  std::vector<T> acc(static_cast<std::size_t>(cout) * 4 * B);
  for (int n = 0; n < s.n; ++n) {
    // cols[co*4 + a*2 + b, p] = sum_ci w[ci, co, a, b] * x[ci, p]
    for (int p0 = 0; p0 < hw; p0 += B) {
      const int p1 = std::min(hw, p0 + B);
      gather_block(input.plane(n, 0), s.c, hw, p0, p1, block.data(), B);
      detail::gemm(true, false, cout * 4, B, s.c, T{1}, weights.raw(), cout * 4, block.data(), B,
                   T{0}, acc.data(), B);
      for (int r = 0; r < cout * 4; ++r) {
        std::memcpy(cols.data() + static_cast<std::size_t>(r) * stride + p0,
                    acc.data() + static_cast<std::size_t>(r) * B, sizeof(T) * (p1 - p0));
      }
    }
    for (int co = 0; co < cout; ++co) {
      T* dst = out.plane(n, co);
      for (int ab = 0; ab < 4; ++ab) {
        const int a = ab / 2;
        const int b = ab % 2;
        const T* row = cols.data() + static_cast<std::size_t>(co * 4 + ab) * stride;
        for (int y = 0; y < s.h; ++y) {
          T* line = dst + static_cast<std::size_t>(2 * y + a) * ow + b;
          const T* src = row + static_cast<std::size_t>(y) * s.w;
          for (int x = 0; x < s.w; ++x) line[2 * x] = src[x] + bias[co];
        }
      }
    }
  }
  return out;
}

template <typename T>
LayerGrads<T> transposed_conv2d_backward(const BasicTensor<T>& input,
                                         const BasicTensor<T>& weights,
                                         const BasicTensor<T>& grad_output) {
  const Shape& s = input.shape();
  const Shape& ks = weights.shape();
  const int cout = ks.c;
  const Shape expected{s.n, cout, 2 * s.h, 2 * s.w};
  if (grad_output.shape() != expected) {
    shape_error("transposed_conv2d_backward", "grad_output shape mismatch",
                grad_output.shape(), expected);
  }
  const int hw = s.h * s.w;
  const int ow = 2 * s.w;
  LayerGrads<T> g{BasicTensor<T>(ks), bias_tensor<T>(cout), BasicTensor<T>(s)};
  std::vector<T> cols(static_cast<std::size_t>(cout) * 4 * hw);
  for (int n = 0; n < s.n; ++n) {
    for (int co = 0; co < cout; ++co) {
      const T* src = grad_output.plane(n, co);
      double acc = 0.0;
      for (std::size_t i = 0; i < static_cast<std::size_t>(4) * hw; ++i) acc += src[i];
      g.bias[co] += static_cast<T>(acc);
      for (int ab = 0; ab < 4; ++ab) {
        const int a = ab / 2;
        const int b = ab % 2;
        T* row = cols.data() + static_cast<std::size_t>(co * 4 + ab) * hw;
        for (int y = 0; y < s.h; ++y) {
          const T* line = src + static_cast<std::size_t>(2 * y + a) * ow + b;
          T* dst = row + static_cast<std::size_t>(y) * s.w;
          for (int x = 0; x < s.w; ++x) dst[x] = line[2 * x];
        }
      }
    }
    // dX = W * cols ; dW += X * cols^T
    for (int p0 = 0; p0 < hw; p0 += kColumnBlock) {
      const int np = std::min(kColumnBlock, hw - p0);
      detail::gemm(false, false, s.c, np, cout * 4, T{1}, weights.raw(), cout * 4,
                   cols.data() + p0, hw, T{0}, g.input.plane(n, 0) + p0, hw);
      detail::gemm(false, true, s.c, cout * 4, np, T{1}, input.plane(n, 0) + p0, hw,
                   cols.data() + p0, hw, T{1}, g.weight.raw(), cout * 4);
    }
  }
  return g;
}

template <typename T>
std::pair<BasicTensor<T>, PoolIndices> maxpool2x2(const BasicTensor<T>& input) {
  const Shape& s = input.shape();
  if (s.h <= 0 || s.w <= 0) shape_error("maxpool2x2", "empty input", s, s);
  const int oh = (s.h + 1) / 2;
  const int ow = (s.w + 1) / 2;
  BasicTensor<T> out(Shape{s.n, s.c, oh, ow});
  PoolIndices idx{s, std::vector<std::uint32_t>(out.size())};
  std::size_t o = 0;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* plane = input.plane(n, c);
      for (int y = 0; y < oh; ++y) {
        const int y0 = 2 * y;
        const int y1 = std::min(2 * y + 1, s.h - 1);
        for (int x = 0; x < ow; ++x, ++o) {
          const int x0 = 2 * x;
          const int x1 = std::min(2 * x + 1, s.w - 1);
          const std::uint32_t cand[4] = {static_cast<std::uint32_t>(y0 * s.w + x0),
                                         static_cast<std::uint32_t>(y0 * s.w + x1),
                                         static_cast<std::uint32_t>(y1 * s.w + x0),
                                         static_cast<std::uint32_t>(y1 * s.w + x1)};
          std::uint32_t best = cand[0];
          for (int i = 1; i < 4; ++i) {
            if (plane[cand[i]] > plane[best]) best = cand[i];
          }
          out[o] = plane[best];
          idx.argmax[o] = best;
        }
      }
    }
  }
  return {std::move(out), std::move(idx)};
}

template <typename T>
BasicTensor<T> maxpool2x2_backward(const BasicTensor<T>& grad_output,
                                   const PoolIndices& indices) {
  const Shape& s = indices.input_shape;
  if (grad_output.size() != indices.argmax.size()) {
    shape_error("maxpool2x2_backward", "grad_output does not match recorded pooling",
                grad_output.shape(), s);
  }
  BasicTensor<T> grad(s);
  const std::size_t out_plane = grad_output.shape().plane();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      T* dst = grad.plane(n, c);
      const T* src = grad_output.plane(n, c);
      const std::uint32_t* arg = indices.argmax.data() +
                                 (static_cast<std::size_t>(n) * s.c + c) * out_plane;
      for (std::size_t i = 0; i < out_plane; ++i) dst[arg[i]] += src[i];
    }
  }
  return grad;
}

template <typename T>
BasicTensor<T> batchnorm2d_train(const BasicTensor<T>& input, std::span<const T> gamma,
                                 std::span<const T> beta, BatchNormStats<T>& stats,
                                 BatchNormCache<T>* cache) {
  const Shape& s = input.shape();
  if (gamma.size() != static_cast<std::size_t>(s.c) || beta.size() != gamma.size()) {
    throw std::invalid_argument("batchnorm2d: gamma/beta length must equal channels " +
                                std::to_string(s.c));
  }
  const std::size_t count = static_cast<std::size_t>(s.n) * s.h * s.w;
  if (count == 0) throw std::invalid_argument("batchnorm2d: zero-size channel in " + s.str());
  const std::size_t plane = s.plane();
  BasicTensor<T> out(s);
  BasicTensor<T> normalized(s);
  std::vector<T> inv_std(s.c);
  for (int c = 0; c < s.c; ++c) {
    double sum = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const T* p = input.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) sum += p[i];
    }
    const double mean = sum / static_cast<double>(count);
    double sq = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const T* p = input.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = p[i] - mean;
        sq += d * d;
      }
    }
    const double var = sq / static_cast<double>(count);
    const double istd = 1.0 / std::sqrt(var + kBatchNormEps);
    inv_std[c] = static_cast<T>(istd);
    for (int n = 0; n < s.n; ++n) {
      const T* p = input.plane(n, c);
      T* q = normalized.plane(n, c);
      T* o = out.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        q[i] = static_cast<T>((p[i] - mean) * istd);
        o[i] = gamma[c] * q[i] + beta[c];
      }
    }
    const double unbiased = count > 1 ? var * count / (count - 1) : var;
    stats.running_mean[c] = static_cast<T>((1.0 - kBatchNormMomentum) * stats.running_mean[c] +
                                           kBatchNormMomentum * mean);
    stats.running_var[c] = static_cast<T>((1.0 - kBatchNormMomentum) * stats.running_var[c] +
                                          kBatchNormMomentum * unbiased);
  }
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename T>
BasicTensor<T> batchnorm2d_infer(const BasicTensor<T>& input, std::span<const T> gamma,
                                 std::span<const T> beta, const BatchNormStats<T>& stats) {
  const Shape& s = input.shape();
  if (gamma.size() != static_cast<std::size_t>(s.c) || beta.size() != gamma.size() ||
      stats.running_mean.size() != gamma.size()) {
    throw std::invalid_argument("batchnorm2d: parameter length must equal channels " +
                                std::to_string(s.c));
  }
  if (s.plane() == 0 || s.n == 0) {
    throw std::invalid_argument("batchnorm2d: zero-size channel in " + s.str());
  }
  BasicTensor<T> out(s);
  const std::size_t plane = s.plane();
  for (int c = 0; c < s.c; ++c) {
    const double istd = 1.0 / std::sqrt(static_cast<double>(stats.running_var[c]) + kBatchNormEps);
    const T scale = static_cast<T>(gamma[c] * istd);
    const T shift = static_cast<T>(beta[c] - stats.running_mean[c] * gamma[c] * istd);
    for (int n = 0; n < s.n; ++n) {
      const T* p = input.plane(n, c);
      T* o = out.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) o[i] = p[i] * scale + shift;
    }
  }
  return out;
}

template <typename T>
LayerGrads<T> batchnorm2d_backward(const BasicTensor<T>& grad_output, std::span<const T> gamma,
                                   const BatchNormCache<T>& cache) {
  const Shape& s = grad_output.shape();
  if (cache.normalized.shape() != s) {
    shape_error("batchnorm2d_backward", "cache does not match grad_output", s,
                cache.normalized.shape());
  }
  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.n) * plane;
  LayerGrads<T> g{bias_tensor<T>(s.c), bias_tensor<T>(s.c), BasicTensor<T>(s)};
  for (int c = 0; c < s.c; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const T* dy = grad_output.plane(n, c);
      const T* xh = cache.normalized.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += dy[i];
        sum_dy_xhat += static_cast<double>(dy[i]) * xh[i];
      }
    }
    g.weight[c] = static_cast<T>(sum_dy_xhat);
    g.bias[c] = static_cast<T>(sum_dy);
    const double k = gamma[c] * static_cast<double>(cache.inv_std[c]) / count;
    for (int n = 0; n < s.n; ++n) {
      const T* dy = grad_output.plane(n, c);
      const T* xh = cache.normalized.plane(n, c);
      T* dx = g.input.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        dx[i] = static_cast<T>(k * (count * dy[i] - sum_dy - xh[i] * sum_dy_xhat));
      }
    }
  }
  return g;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input) {
  BasicTensor<T> out(input.shape());
  auto src = input.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > T{0} ? src[i] : T{0};
  return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_output) {
  if (input.shape() != grad_output.shape()) {
    shape_error("relu_backward", "shape mismatch", input.shape(), grad_output.shape());
  }
  BasicTensor<T> out(input.shape());
  auto x = input.data();
  auto dy = grad_output.data();
  auto dx = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T{0} ? dy[i] : T{0};
  return out;
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& input) {
  BasicTensor<T> out(input.shape());
  auto src = input.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const T x = src[i];
    // Split by sign so exp never overflows.
    if (x >= T{0}) {
      dst[i] = T{1} / (T{1} + std::exp(-x));
    } else {
      const T e = std::exp(x);
      dst[i] = e / (T{1} + e);
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> sigmoid_backward(const BasicTensor<T>& output, const BasicTensor<T>& grad_output) {
  if (output.shape() != grad_output.shape()) {
    shape_error("sigmoid_backward", "shape mismatch", output.shape(), grad_output.shape());
  }
  BasicTensor<T> out(output.shape());
  auto y = output.data();
  auto dy = grad_output.data();
  auto dx = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = dy[i] * y[i] * (T{1} - y[i]);
  return out;
}

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& first, const BasicTensor<T>& second) {
  const Shape& a = first.shape();
  const Shape& b = second.shape();
  if (a.n != b.n || a.h != b.h || a.w != b.w) {
    shape_error("concat_channels", "batch and spatial extents must match", a, b);
  }
  BasicTensor<T> out(Shape{a.n, a.c + b.c, a.h, a.w});
  const std::size_t pa = static_cast<std::size_t>(a.c) * a.plane();
  const std::size_t pb = static_cast<std::size_t>(b.c) * b.plane();
  for (int n = 0; n < a.n; ++n) {
    std::memcpy(out.plane(n, 0), first.plane(n, 0), sizeof(T) * pa);
    std::memcpy(out.plane(n, a.c), second.plane(n, 0), sizeof(T) * pb);
  }
  return out;
}

template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> concat_channels_backward(
    const BasicTensor<T>& grad_output, int first_channels) {
  const Shape& s = grad_output.shape();
  if (first_channels < 0 || first_channels > s.c) {
    throw std::invalid_argument("concat_channels_backward: split point out of range");
  }
  BasicTensor<T> a(Shape{s.n, first_channels, s.h, s.w});
  BasicTensor<T> b(Shape{s.n, s.c - first_channels, s.h, s.w});
  const std::size_t pa = a.shape().c * s.plane();
  const std::size_t pb = b.shape().c * s.plane();
  for (int n = 0; n < s.n; ++n) {
    if (pa) std::memcpy(a.plane(n, 0), grad_output.plane(n, 0), sizeof(T) * pa);
    if (pb) std::memcpy(b.plane(n, 0), grad_output.plane(n, first_channels), sizeof(T) * pb);
  }
  return {std::move(a), std::move(b)};
}

template <typename T>
BasicTensor<T> crop(const BasicTensor<T>& input, int h, int w) {
  const Shape& s = input.shape();
  if (h > s.h || w > s.w || h <= 0 || w <= 0) {
    shape_error("crop", "crop window exceeds input", s, Shape{s.n, s.c, h, w});
  }
  if (h == s.h && w == s.w) return input;
  BasicTensor<T> out(Shape{s.n, s.c, h, w});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < h; ++y) {
        std::memcpy(&out.at(n, c, y, 0), &input.at(n, c, y, 0), sizeof(T) * w);
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> crop_backward(const BasicTensor<T>& grad_output, const Shape& input_shape) {
  const Shape& s = grad_output.shape();
  if (s == input_shape) return grad_output;
  BasicTensor<T> out(input_shape);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < s.h; ++y) {
        std::memcpy(&out.at(n, c, y, 0), &grad_output.at(n, c, y, 0), sizeof(T) * s.w);
      }
    }
  }
  return out;
}

template <typename T>
LossResult<T> bce_with_sigmoid(const BasicTensor<T>& logits, const BasicTensor<T>& targets) {
  if (logits.shape() != targets.shape()) {
    shape_error("bce_with_sigmoid", "logits and targets must match", logits.shape(),
                targets.shape());
  }
  if (logits.size() == 0) throw std::invalid_argument("bce_with_sigmoid: empty input");
  LossResult<T> r{0.0, BasicTensor<T>(logits.shape())};
  auto x = logits.data();
  auto y = targets.data();
  auto g = r.grad.data();
  const double inv_n = 1.0 / static_cast<double>(x.size());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    const double yi = y[i];
    if (!(yi >= 0.0 && yi <= 1.0)) {
      throw std::invalid_argument("bce_with_sigmoid: target " + std::to_string(yi) +
                                  " outside [0,1] at index " + std::to_string(i));
    }
    total += std::max(xi, 0.0) - xi * yi + std::log1p(std::exp(-std::abs(xi)));
    const double s = xi >= 0.0 ? 1.0 / (1.0 + std::exp(-xi)) : std::exp(xi) / (1.0 + std::exp(xi));
    g[i] = static_cast<T>((s - yi) * inv_n);
  }
  r.loss = total * inv_n;
  return r;
}

#define TCR_NN_INSTANTIATE(T)                                                                   \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                 \
                                 std::span<const T>);                                          \
  template LayerGrads<T> conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&,         \
                                         const BasicTensor<T>&);                               \
  template BasicTensor<T> transposed_conv2d(const BasicTensor<T>&, const BasicTensor<T>&,      \
                                            std::span<const T>);                               \
  template LayerGrads<T> transposed_conv2d_backward(const BasicTensor<T>&,                     \
                                                    const BasicTensor<T>&,                     \
                                                    const BasicTensor<T>&);                    \
  template std::pair<BasicTensor<T>, PoolIndices> maxpool2x2(const BasicTensor<T>&);           \
  template BasicTensor<T> maxpool2x2_backward(const BasicTensor<T>&, const PoolIndices&);      \
  template BasicTensor<T> batchnorm2d_train(const BasicTensor<T>&, std::span<const T>,         \
                                            std::span<const T>, BatchNormStats<T>&,            \
                                            BatchNormCache<T>*);                               \
  template BasicTensor<T> batchnorm2d_infer(const BasicTensor<T>&, std::span<const T>,         \
                                            std::span<const T>, const BatchNormStats<T>&);     \
  template LayerGrads<T> batchnorm2d_backward(const BasicTensor<T>&, std::span<const T>,       \
                                              const BatchNormCache<T>&);                       \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                         \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);         \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                      \
  template BasicTensor<T> sigmoid_backward(const BasicTensor<T>&, const BasicTensor<T>&);      \
  template BasicTensor<T> concat_channels(const BasicTensor<T>&, const BasicTensor<T>&);       \
  template std::pair<BasicTensor<T>, BasicTensor<T>> concat_channels_backward(                 \
      const BasicTensor<T>&, int);                                                             \
  template BasicTensor<T> crop(const BasicTensor<T>&, int, int);                               \
  template BasicTensor<T> crop_backward(const BasicTensor<T>&, const Shape&);                  \
  template LossResult<T> bce_with_sigmoid(const BasicTensor<T>&, const BasicTensor<T>&);

TCR_NN_INSTANTIATE(float)
TCR_NN_INSTANTIATE(double)

#undef TCR_NN_INSTANTIATE

}  // namespace tcr::nn
