#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace tcr::nn {

/// Dense 4-D extent. Activations use (batch, channels, height, width);
/// convolution kernels reuse the same slots as (out, in, kh, kw).
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  [[nodiscard]] std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  [[nodiscard]] std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{0});
  BasicTensor(Shape shape, std::vector<T> values);

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  [[nodiscard]] std::span<T> data() { return data_; }
  [[nodiscard]] std::span<const T> data() const { return data_; }
  [[nodiscard]] T* raw() { return data_.data(); }
  [[nodiscard]] const T* raw() const { return data_.data(); }

  /// Pointer to the (h, w) plane of sample `n`, channel `c`.
  [[nodiscard]] T* plane(int n, int c) { return data_.data() + offset(n, c, 0, 0); }
  [[nodiscard]] const T* plane(int n, int c) const {
    return data_.data() + offset(n, c, 0, 0);
  }

  [[nodiscard]] T& at(int n, int c, int y, int x) { return data_[offset(n, c, y, x)]; }
  [[nodiscard]] const T& at(int n, int c, int y, int x) const {
    return data_[offset(n, c, y, x)];
  }
  [[nodiscard]] T& operator[](std::size_t i) { return data_[i]; }
  [[nodiscard]] const T& operator[](std::size_t i) const { return data_[i]; }

  void fill(T value);
  void reshape(Shape shape);

  [[nodiscard]] std::size_t offset(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

 private:
  Shape shape_{0, 0, 0, 0};
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// Converts between precisions (used to lift float models into 64-bit
/// gradient checks).
template <typename To, typename From>
BasicTensor<To> cast(const BasicTensor<From>& src);

/// True when every element is finite.
template <typename T>
bool all_finite(const BasicTensor<T>& t);

/// Trainable tensor with its accumulated gradient.
template <typename T>
struct BasicParameter {
  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> grad;
};

using Parameter = BasicParameter<float>;

/// Total element count over a parameter list.
template <typename T>
std::int64_t parameter_count(std::span<const BasicParameter<T>> params) {
  std::int64_t total = 0;
  for (const auto& p : params) total += static_cast<std::int64_t>(p.value.size());
  return total;
}

}  // namespace tcr::nn
