#include "tcr/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace tcr::nn {

std::string Shape::str() const {
  std::ostringstream os;
  os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
  return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw std::invalid_argument("negative tensor extent " + shape.str());
  }
  data_.assign(shape.size(), fill);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values)
    : shape_(shape), data_(std::move(values)) {
  if (data_.size() != shape.size()) {
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape.str());
  }
}

template <typename T>
void BasicTensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
void BasicTensor<T>::reshape(Shape shape) {
  if (shape.size() != data_.size()) {
    throw std::invalid_argument("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  shape_ = shape;
}

template <typename To, typename From>
BasicTensor<To> cast(const BasicTensor<From>& src) {
  BasicTensor<To> out(src.shape());
  auto in = src.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) dst[i] = static_cast<To>(in[i]);
  return out;
}

template <typename T>
bool all_finite(const BasicTensor<T>& t) {
  return std::all_of(t.data().begin(), t.data().end(),
                     [](T v) { return std::isfinite(v); });
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template BasicTensor<double> cast<double, float>(const BasicTensor<float>&);
template BasicTensor<float> cast<float, double>(const BasicTensor<double>&);
template BasicTensor<float> cast<float, float>(const BasicTensor<float>&);
template BasicTensor<double> cast<double, double>(const BasicTensor<double>&);
template bool all_finite(const BasicTensor<float>&);
template bool all_finite(const BasicTensor<double>&);

}  // namespace tcr::nn
