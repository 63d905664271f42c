#include "ptn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ptn {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string(shape_));
  }
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
  }
  return shape_[axis];
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  return Tensor<T>(std::move(shape), data_);
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
Tensor<T> circshift_rows(const Tensor<T>& x, long k) {
  if (x.rank() != 4) throw DimensionError("circshift_rows expects NCHW, got " + shape_string(x.shape()));
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> out(x.shape());
  const long hh = static_cast<long>(h);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t r = 0; r < h; ++r) {
        const auto src = static_cast<std::size_t>(((static_cast<long>(r) - k) % hh + hh) % hh);
        std::copy_n(&x.at(i, j, src, 0), w, &out.at(i, j, r, 0));
      }
  return out;
}

template <typename T>
Tensor<T> shift_columns(const Tensor<T>& x, long m) {
  if (x.rank() != 4) throw DimensionError("shift_columns expects NCHW, got " + shape_string(x.shape()));
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t col = 0; col < w; ++col) {
          const long src = static_cast<long>(col) - m;
          if (src >= 0 && src < static_cast<long>(w)) out.at(i, j, r, col) = x.at(i, j, r, static_cast<std::size_t>(src));
        }
  return out;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <typename T>
T mean_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  if (a.empty()) return 0;
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
  return static_cast<T>(s / static_cast<double>(a.size()));
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> circshift_rows(const Tensor<float>&, long);
template Tensor<double> circshift_rows(const Tensor<double>&, long);
template Tensor<float> shift_columns(const Tensor<float>&, long);
template Tensor<double> shift_columns(const Tensor<double>&, long);
template float max_abs_diff(const Tensor<float>&, const Tensor<float>&);
template double max_abs_diff(const Tensor<double>&, const Tensor<double>&);
template float mean_abs_diff(const Tensor<float>&, const Tensor<float>&);
template double mean_abs_diff(const Tensor<double>&, const Tensor<double>&);

}  // namespace ptn
