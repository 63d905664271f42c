#include "ptn/origin.hpp"

#include <algorithm>
#include <cmath>

namespace ptn {

namespace {

void require_heatmap(const Shape& s, const char* what) {
  if (s.size() != 4 || s[1] != 1) {
    throw DimensionError(std::string(what) + ": expected N x 1 x H x W, got " + shape_string(s));
  }
}

}  // namespace

template <typename T>
Var<T> spatial_softmax(Tape<T>& tape, const Var<T>& raw) {
  require_heatmap(raw.shape(), "spatial_softmax");
  const std::size_t n = raw.dim(0), plane = raw.dim(2) * raw.dim(3);
  Tensor<T> out(raw.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const T* x = raw.value().raw() + i * plane;
    const double m = *std::max_element(x, x + plane);
    double s = 0;
    for (std::size_t k = 0; k < plane; ++k) s += std::exp(x[k] - m);
    for (std::size_t k = 0; k < plane; ++k) out[i * plane + k] = static_cast<T>(std::exp(x[k] - m) / s);
  }
  Var<T> result(std::move(out));
  Node<T>* xn = raw.node();
  Node<T>* on = result.node();
  tape.record("spatial_softmax", {raw}, result, [=]() {
    auto& dx = xn->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      const T* p = on->value.raw() + i * plane;
      const T* g = on->grad.raw() + i * plane;
      double dot = 0;
      for (std::size_t k = 0; k < plane; ++k) dot += static_cast<double>(p[k]) * g[k];
      for (std::size_t k = 0; k < plane; ++k) dx[i * plane + k] += static_cast<T>(p[k] * (g[k] - dot));
    }
  });
  return result;
}

template <typename T>
Var<T> centroid(Tape<T>& tape, const Var<T>& heatmap) {
  require_heatmap(heatmap.shape(), "centroid");
  const std::size_t n = heatmap.dim(0), h = heatmap.dim(2), w = heatmap.dim(3), plane = h * w;
  Tensor<T> out(Shape{n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    double sx = 0, sy = 0;
    const T* p = heatmap.value().raw() + i * plane;
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) {
        sx += static_cast<double>(c) * p[r * w + c];
        sy += static_cast<double>(r) * p[r * w + c];
      }
    out[i * 2] = static_cast<T>(sx);
    out[i * 2 + 1] = static_cast<T>(sy);
  }
  Var<T> result(std::move(out));
  Node<T>* hn = heatmap.node();
  Node<T>* on = result.node();
  tape.record("centroid", {heatmap}, result, [=]() {
    auto& dh = hn->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      const T gx = on->grad[i * 2], gy = on->grad[i * 2 + 1];
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) dh[i * plane + r * w + c] += gx * static_cast<T>(c) + gy * static_cast<T>(r);
    }
  });
  return result;
}

template <typename T>
Var<T> to_input_frame(Tape<T>& tape, const Var<T>& origin, int stride_product) {
  if (stride_product < 1) throw ArgumentError("to_input_frame: stride product must be >= 1");
  if (origin.value().rank() != 2 || origin.dim(1) != 2) {
    throw DimensionError("to_input_frame: origin must be [N, 2], got " + shape_string(origin.shape()));
  }
  const T s = static_cast<T>(stride_product);
  const T offset = (s - T(1)) / T(2);
  Tensor<T> out(origin.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * origin.value()[i] + offset;
  Var<T> result(std::move(out));
  Node<T>* xn = origin.node();
  Node<T>* on = result.node();
  tape.record("to_input_frame", {origin}, result, [=]() {
    auto& d = xn->grad_buffer();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * on->grad[i];
  });
  return result;
}

template Var<float> spatial_softmax(Tape<float>&, const Var<float>&);
template Var<double> spatial_softmax(Tape<double>&, const Var<double>&);
template Var<float> centroid(Tape<float>&, const Var<float>&);
template Var<double> centroid(Tape<double>&, const Var<double>&);
template Var<float> to_input_frame(Tape<float>&, const Var<float>&, int);
template Var<double> to_input_frame(Tape<double>&, const Var<double>&, int);

}  // namespace ptn
