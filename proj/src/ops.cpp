#include "ptn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "ptn/parallel.hpp"

namespace ptn {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

void require_rank(const Shape& s, std::size_t rank, const char* what) {
  if (s.size() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(s));
  }
}

/// Source row/column lookup tables for one conv layer; -1 marks zero padding.
struct ConvGeometry {
  std::size_t n, c, h, w, o, kh, kw, ho, wo;
  int stride;
  std::vector<long> row_src;  // [kh][ho]
  std::vector<long> col_src;  // [kw][wo]

  std::size_t patch() const { return c * kh * kw; }
  std::size_t pixels() const { return ho * wo; }
};

ConvGeometry make_geometry(const Shape& in, const Shape& k, int stride, PaddingMode padding) {
  ConvGeometry g{};
  g.n = in[0];
  g.c = in[1];
  g.h = in[2];
  g.w = in[3];
  g.o = k[0];
  g.kh = k[2];
  g.kw = k[3];
  g.stride = stride;
  g.ho = (g.h + stride - 1) / stride;
  g.wo = (g.w + stride - 1) / stride;
  const long pad_h = static_cast<long>(g.kh / 2), pad_w = static_cast<long>(g.kw / 2);
  const long h = static_cast<long>(g.h), w = static_cast<long>(g.w);
  g.row_src.resize(g.kh * g.ho);
  g.col_src.resize(g.kw * g.wo);
  for (std::size_t dy = 0; dy < g.kh; ++dy)
    for (std::size_t i = 0; i < g.ho; ++i) {
      long r = static_cast<long>(i) * stride + static_cast<long>(dy) - pad_h;
      if (padding.vertical == VerticalPadding::wrap) {
        r = ((r % h) + h) % h;
      } else if (r < 0 || r >= h) {
        r = -1;
      }
      g.row_src[dy * g.ho + i] = r;
    }
  for (std::size_t dx = 0; dx < g.kw; ++dx)
    for (std::size_t j = 0; j < g.wo; ++j) {
      long col = static_cast<long>(j) * stride + static_cast<long>(dx) - pad_w;
      g.col_src[dx * g.wo + j] = (col < 0 || col >= w) ? -1 : col;
    }
  return g;
}

// Per-thread reusable buffers; `slot` separates buffers that are live at the same time.
template <typename T>
T* scratch(int slot, std::size_t size) {
  thread_local std::vector<T> buffers[2];
  auto& b = buffers[slot];
  if (b.size() < size) b.resize(size);
  return b.data();
}

template <typename T>
void im2col(const ConvGeometry& g, const T* image, T* cols) {
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    const T* plane = image + ch * g.h * g.w;
    for (std::size_t dy = 0; dy < g.kh; ++dy)
      for (std::size_t dx = 0; dx < g.kw; ++dx) {
        T* row = cols + ((ch * g.kh + dy) * g.kw + dx) * g.pixels();
        for (std::size_t i = 0; i < g.ho; ++i) {
          const long r = g.row_src[dy * g.ho + i];
          T* dst = row + i * g.wo;
          if (r < 0) {
            std::fill_n(dst, g.wo, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(r) * g.w;
          for (std::size_t j = 0; j < g.wo; ++j) {
            const long col = g.col_src[dx * g.wo + j];
            dst[j] = col < 0 ? T(0) : src[col];
          }
        }
      }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* cols, T* image) {
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    T* plane = image + ch * g.h * g.w;
    for (std::size_t dy = 0; dy < g.kh; ++dy)
      for (std::size_t dx = 0; dx < g.kw; ++dx) {
        const T* row = cols + ((ch * g.kh + dy) * g.kw + dx) * g.pixels();
        for (std::size_t i = 0; i < g.ho; ++i) {
          const long r = g.row_src[dy * g.ho + i];
          if (r < 0) continue;
          T* dst = plane + static_cast<std::size_t>(r) * g.w;
          const T* src = row + i * g.wo;
          for (std::size_t j = 0; j < g.wo; ++j) {
            const long col = g.col_src[dx * g.wo + j];
            if (col >= 0) dst[col] += src[j];
          }
        }
      }
  }
}

}  // namespace

template <typename T>
Var<T> conv2d(Tape<T>& tape, const Var<T>& input, const Var<T>& kernel, const Var<T>& bias, int stride,
              PaddingMode padding) {
  if (stride < 1) throw ArgumentError("conv2d: stride must be >= 1, got " + std::to_string(stride));
  require_rank(input.shape(), 4, "conv2d input");
  require_rank(kernel.shape(), 4, "conv2d kernel");
  if (kernel.dim(1) != input.dim(1)) {
    throw DimensionError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) + " input channels, input has " +
                         std::to_string(input.dim(1)));
  }
  if (kernel.dim(2) % 2 == 0 || kernel.dim(3) % 2 == 0) {
    throw DimensionError("conv2d: kernel spatial size must be odd, got " + shape_string(kernel.shape()));
  }
  if (bias && (bias.value().rank() != 1 || bias.dim(0) != kernel.dim(0))) {
    throw DimensionError("conv2d: bias shape " + shape_string(bias.shape()) + " does not match kernel");
  }

  auto geom = std::make_shared<ConvGeometry>(make_geometry(input.shape(), kernel.shape(), stride, padding));
  const auto& g = *geom;
  const std::size_t patch = g.patch(), pixels = g.pixels();

  Tensor<T> out(Shape{g.n, g.o, g.ho, g.wo});
  const T* x = input.value().raw();
  const T* wdata = kernel.value().raw();
  const T* bdata = bias ? bias.value().raw() : nullptr;
  T* y = out.raw();
  // Columns are rebuilt per item (forward and backward) instead of kept for the
  // whole batch; touching fresh memory costs more than the copy.
  parallel_for(g.n, [&](std::size_t n) {
    T* cn = scratch<T>(0, patch * pixels);
    im2col(g, x + n * g.c * g.h * g.w, cn);
    MatMap<T> yn(y + n * g.o * pixels, g.o, pixels);
    yn.noalias() = ConstMatMap<T>(wdata, g.o, patch) * ConstMatMap<T>(cn, patch, pixels);
    if (bdata) {
      for (std::size_t oc = 0; oc < g.o; ++oc) yn.row(oc).array() += bdata[oc];
    }
  });

  Var<T> result(std::move(out));
  Node<T>* xn = input.node();
  Node<T>* kn = kernel.node();
  Node<T>* bn = bias ? bias.node() : nullptr;
  Node<T>* on = result.node();
  std::vector<Var<T>> inputs{input, kernel};
  if (bias) inputs.push_back(bias);
  tape.record("conv2d", std::move(inputs), result, [=]() {
    const auto& g = *geom;
    const std::size_t patch = g.patch(), pixels = g.pixels();
    const T* dy = on->grad.raw();
    const T* x = xn->value.raw();
    const T* wdata = kn->value.raw();
    if (kn->requires_grad) {
      std::vector<T> partial(g.n * g.o * patch);
      parallel_for(g.n, [&](std::size_t n) {
        T* cn = scratch<T>(0, patch * pixels);
        im2col(g, x + n * g.c * g.h * g.w, cn);
        MatMap<T> pn(partial.data() + n * g.o * patch, g.o, patch);
        pn.noalias() = ConstMatMap<T>(dy + n * g.o * pixels, g.o, pixels) *
                       ConstMatMap<T>(cn, patch, pixels).transpose();
      });
      T* dw = kn->grad_buffer().raw();
      for (std::size_t n = 0; n < g.n; ++n) {
        const T* pn = partial.data() + n * g.o * patch;
        for (std::size_t i = 0; i < g.o * patch; ++i) dw[i] += pn[i];
      }
    }
    if (bn && bn->requires_grad) {
      T* db = bn->grad_buffer().raw();
      for (std::size_t n = 0; n < g.n; ++n)
        for (std::size_t oc = 0; oc < g.o; ++oc) {
          const T* row = dy + (n * g.o + oc) * pixels;
          T s = 0;
          for (std::size_t p = 0; p < pixels; ++p) s += row[p];
          db[oc] += s;
        }
    }
    if (xn->requires_grad) {
      T* dx = xn->grad_buffer().raw();
      parallel_for(g.n, [&](std::size_t n) {
        T* dcols = scratch<T>(1, patch * pixels);
        MatMap<T>(dcols, patch, pixels).noalias() =
            ConstMatMap<T>(wdata, g.o, patch).transpose() * ConstMatMap<T>(dy + n * g.o * pixels, g.o, pixels);
        col2im(g, dcols, dx + n * g.c * g.h * g.w);
      });
    }
  });
  return result;
}

template <typename T>
Var<T> relu(Tape<T>& tape, const Var<T>& input) {
  const auto& x = input.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  Var<T> result(std::move(out));
  Node<T>* xn = input.node();
  Node<T>* on = result.node();
  tape.record("relu", {input}, result, [=]() {
    auto& dx = xn->grad_buffer();
    const auto& dy = on->grad;
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (xn->value[i] > T(0)) dx[i] += dy[i];
  });
  return result;
}

template <typename T>
Var<T> batch_norm(Tape<T>& tape, const Var<T>& input, const Var<T>& gamma, const Var<T>& beta,
                  BatchNormState<T>& state, Mode mode, double momentum, double epsilon) {
  require_rank(input.shape(), 4, "batch_norm input");
  const std::size_t n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
  if (n == 0) throw ArgumentError("batch_norm: zero batch size");
  if (gamma.value().size() != c || beta.value().size() != c) {
    throw DimensionError("batch_norm: gamma/beta must have " + std::to_string(c) + " entries");
  }
  if (state.running_mean.size() != c || state.running_var.size() != c) {
    throw DimensionError("batch_norm: running statistics must have " + std::to_string(c) + " entries");
  }
  const std::size_t count = n * plane;
  const auto& x = input.value();
  auto xhat = std::make_shared<Tensor<T>>(x.shape());
  auto inv_std = std::make_shared<std::vector<T>>(c);
  Tensor<T> out(x.shape());

  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean = 0, var = 0;
    if (mode == Mode::train) {
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = x.raw() + (i * c + ch) * plane;
        for (std::size_t k = 0; k < plane; ++k) mean += p[k];
      }
      mean /= static_cast<double>(count);
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = x.raw() + (i * c + ch) * plane;
        for (std::size_t k = 0; k < plane; ++k) {
          const double d = p[k] - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(count);
      const double unbiased = count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
      state.running_mean[ch] = static_cast<T>((1.0 - momentum) * state.running_mean[ch] + momentum * mean);
      state.running_var[ch] = static_cast<T>((1.0 - momentum) * state.running_var[ch] + momentum * unbiased);
    } else {
      mean = state.running_mean[ch];
      var = state.running_var[ch];
    }
    const double is = 1.0 / std::sqrt(var + epsilon);
    (*inv_std)[ch] = static_cast<T>(is);
    const double g = gamma.value()[ch], b = beta.value()[ch];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c + ch) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        const double xh = (x[off + k] - mean) * is;
        (*xhat)[off + k] = static_cast<T>(xh);
        out[off + k] = static_cast<T>(g * xh + b);
      }
    }
  }

  Var<T> result(std::move(out));
  Node<T>* xn = input.node();
  Node<T>* gn = gamma.node();
  Node<T>* bn = beta.node();
  Node<T>* on = result.node();
  tape.record("batch_norm", {input, gamma, beta}, result, [=]() {
    const auto& dy = on->grad;
    for (std::size_t ch = 0; ch < c; ++ch) {
      double sum_dy = 0, sum_dy_xhat = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t off = (i * c + ch) * plane;
        for (std::size_t k = 0; k < plane; ++k) {
          sum_dy += dy[off + k];
          sum_dy_xhat += static_cast<double>(dy[off + k]) * (*xhat)[off + k];
        }
      }
      if (gn->requires_grad) gn->grad_buffer()[ch] += static_cast<T>(sum_dy_xhat);
      if (bn->requires_grad) bn->grad_buffer()[ch] += static_cast<T>(sum_dy);
      if (!xn->requires_grad) continue;
      auto& dx = xn->grad_buffer();
      const double scale = static_cast<double>(gn->value[ch]) * (*inv_std)[ch];
      if (mode == Mode::train) {
        const double m = static_cast<double>(count);
        const double mean_dy = sum_dy / m, mean_dy_xhat = sum_dy_xhat / m;
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t off = (i * c + ch) * plane;
          for (std::size_t k = 0; k < plane; ++k)
            dx[off + k] += static_cast<T>(scale * (dy[off + k] - mean_dy - (*xhat)[off + k] * mean_dy_xhat));
        }
      } else {
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t off = (i * c + ch) * plane;
          for (std::size_t k = 0; k < plane; ++k) dx[off + k] += static_cast<T>(scale * dy[off + k]);
        }
      }
    }
  });
  return result;
}

template <typename T>
Var<T> global_average_pool(Tape<T>& tape, const Var<T>& input) {
  require_rank(input.shape(), 4, "global_average_pool");
  const std::size_t n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
  if (plane == 0) throw DimensionError("global_average_pool: empty spatial extent");
  Tensor<T> out(Shape{n, c});
  const auto& x = input.value();
  for (std::size_t i = 0; i < n * c; ++i) {
    double s = 0;
    for (std::size_t k = 0; k < plane; ++k) s += x[i * plane + k];
    out[i] = static_cast<T>(s / static_cast<double>(plane));
  }
  Var<T> result(std::move(out));
  Node<T>* xn = input.node();
  Node<T>* on = result.node();
  tape.record("global_average_pool", {input}, result, [=]() {
    auto& dx = xn->grad_buffer();
    const T inv = T(1) / static_cast<T>(plane);
    for (std::size_t i = 0; i < n * c; ++i) {
      const T g = on->grad[i] * inv;
      for (std::size_t k = 0; k < plane; ++k) dx[i * plane + k] += g;
    }
  });
  return result;
}

template <typename T>
Var<T> softmax_cross_entropy(Tape<T>& tape, const Var<T>& logits, std::span<const int> labels) {
  require_rank(logits.shape(), 2, "softmax_cross_entropy logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(n));
  }
  if (n == 0) throw ArgumentError("softmax_cross_entropy: empty batch");
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw ArgumentError("softmax_cross_entropy: label " + std::to_string(labels[i]) + " outside [0, " +
                          std::to_string(k) + ")");
    }
  }
  const auto& z = logits.value();
  auto probs = std::make_shared<Tensor<T>>(z.shape());
  double loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = z.raw() + i * k;
    const double m = *std::max_element(row, row + k);
    double s = 0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < k; ++j) (*probs)[i * k + j] = static_cast<T>(std::exp(row[j] - lse));
    loss += lse - row[labels[i]];
  }
  Var<T> result(Tensor<T>(Shape{1}, static_cast<T>(loss / static_cast<double>(n))));
  std::vector<int> labs(labels.begin(), labels.end());
  Node<T>* zn = logits.node();
  Node<T>* on = result.node();
  tape.record("softmax_cross_entropy", {logits}, result, [=]() {
    auto& dz = zn->grad_buffer();
    const T g = on->grad[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const T onehot = static_cast<int>(j) == labs[i] ? T(1) : T(0);
        dz[i * k + j] += g * ((*probs)[i * k + j] - onehot);
      }
  });
  return result;
}

template <typename T>
Var<T> sum(Tape<T>& tape, const Var<T>& input) {
  double s = 0;
  for (auto v : input.value().data()) s += v;
  Var<T> result(Tensor<T>(Shape{1}, static_cast<T>(s)));
  Node<T>* xn = input.node();
  Node<T>* on = result.node();
  tape.record("sum", {input}, result, [=]() {
    auto& dx = xn->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += on->grad[0];
  });
  return result;
}

template <typename T>
Var<T> weighted_sum(Tape<T>& tape, const Var<T>& input, const Tensor<T>& weights) {
  if (weights.size() != input.value().size()) throw DimensionError("weighted_sum: weight count mismatch");
  double s = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += static_cast<double>(weights[i]) * input.value()[i];
  Var<T> result(Tensor<T>(Shape{1}, static_cast<T>(s)));
  Node<T>* xn = input.node();
  Node<T>* on = result.node();
  tape.record("weighted_sum", {input}, result, [=]() {
    auto& dx = xn->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += on->grad[0] * weights[i];
  });
  return result;
}

template <typename T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  Var<T> result(std::move(out));
  Node<T>* an = a.node();
  Node<T>* bn = b.node();
  Node<T>* on = result.node();
  tape.record("add", {a, b}, result, [=]() {
    for (Node<T>* in : {an, bn}) {
      if (!in->requires_grad) continue;
      auto& d = in->grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += on->grad[i];
    }
  });
  return result;
}

template <typename T>
Var<T> add_constant(Tape<T>& tape, const Var<T>& input, const Tensor<T>& offset) {
  if (input.shape() != offset.shape()) throw DimensionError("add_constant: shape mismatch");
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = input.value()[i] + offset[i];
  Var<T> result(std::move(out));
  Node<T>* xn = input.node();
  Node<T>* on = result.node();
  tape.record("add_constant", {input}, result, [=]() {
    auto& d = xn->grad_buffer();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += on->grad[i];
  });
  return result;
}

template <typename T>
Var<T> reshape(Tape<T>& tape, const Var<T>& input, Shape shape) {
  if (shape_size(shape) != input.value().size()) {
    throw DimensionError("reshape: cannot view " + shape_string(input.shape()) + " as " + shape_string(shape));
  }
  Var<T> result(input.value().reshaped(std::move(shape)));
  Node<T>* xn = input.node();
  Node<T>* on = result.node();
  tape.record("reshape", {input}, result, [=]() {
    auto& d = xn->grad_buffer();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += on->grad[i];
  });
  return result;
}

#define PTN_INSTANTIATE_OPS(T)                                                                                 \
  template Var<T> conv2d(Tape<T>&, const Var<T>&, const Var<T>&, const Var<T>&, int, PaddingMode);             \
  template Var<T> relu(Tape<T>&, const Var<T>&);                                                               \
  template Var<T> batch_norm(Tape<T>&, const Var<T>&, const Var<T>&, const Var<T>&, BatchNormState<T>&, Mode, \
                             double, double);                                                                  \
  template Var<T> global_average_pool(Tape<T>&, const Var<T>&);                                                \
  template Var<T> softmax_cross_entropy(Tape<T>&, const Var<T>&, std::span<const int>);                        \
  template Var<T> sum(Tape<T>&, const Var<T>&);                                                                \
  template Var<T> weighted_sum(Tape<T>&, const Var<T>&, const Tensor<T>&);                                     \
  template Var<T> add(Tape<T>&, const Var<T>&, const Var<T>&);                                                 \
  template Var<T> add_constant(Tape<T>&, const Var<T>&, const Tensor<T>&);                                     \
  template Var<T> reshape(Tape<T>&, const Var<T>&, Shape);

PTN_INSTANTIATE_OPS(float)
PTN_INSTANTIATE_OPS(double)

}  // namespace ptn
