#include "ptn/sampler.hpp"

#include <cmath>
#include <numbers>

#include "ptn/ops.hpp"
#include "ptn/parallel.hpp"

namespace ptn {

double PolarGridSpec::default_max_radius(std::size_t input_height, std::size_t input_width) {
  const double h = static_cast<double>(input_height), w = static_cast<double>(input_width);
  return 0.5 * std::sqrt(h * h + w * w);
}

double polar_radius(double column, std::size_t width, double max_radius, RadialSpacing spacing) {
  const double t = column / static_cast<double>(width);
  return spacing == RadialSpacing::logarithmic ? std::pow(max_radius, t) : max_radius * t;
}

namespace {

void validate_grid(std::size_t height, std::size_t width, double max_radius) {
  if (!(max_radius > 0.0)) throw ArgumentError("polar grid: max radius must be positive, got " + std::to_string(max_radius));
  if (height == 0 || width == 0) throw ArgumentError("polar grid: output size must be positive");
}

/// Offsets (rho cos, rho sin) for every output pixel, shape H x W x 2.
std::vector<double> polar_offsets(std::size_t height, std::size_t width, double max_radius, RadialSpacing spacing) {
  std::vector<double> off(height * width * 2);
  for (std::size_t y = 0; y < height; ++y) {
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(y) / static_cast<double>(height);
    const double c = std::cos(theta), s = std::sin(theta);
    for (std::size_t x = 0; x < width; ++x) {
      const double rho = polar_radius(static_cast<double>(x), width, max_radius, spacing);
      off[(y * width + x) * 2] = rho * c;
      off[(y * width + x) * 2 + 1] = rho * s;
    }
  }
  return off;
}

/// Sample of one plane at (xs, ys); also the partial derivatives when requested.
template <typename T>
T sample_plane(const T* plane, long h, long w, T xs, T ys, T* dx = nullptr, T* dy = nullptr) {
  const T fx = std::floor(xs), fy = std::floor(ys);
  const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
  const T ax = xs - fx, ay = ys - fy;
  auto px = [&](long yy, long xx) -> T {
    return (xx < 0 || yy < 0 || xx >= w || yy >= h) ? T(0) : plane[yy * w + xx];
  };
  const T v00 = px(y0, x0), v01 = px(y0, x0 + 1), v10 = px(y0 + 1, x0), v11 = px(y0 + 1, x0 + 1);
  if (dx) *dx = (T(1) - ay) * (v01 - v00) + ay * (v11 - v10);
  if (dy) *dy = (T(1) - ax) * (v10 - v00) + ax * (v11 - v01);
  return (T(1) - ay) * ((T(1) - ax) * v00 + ax * v01) + ay * ((T(1) - ax) * v10 + ax * v11);
}

template <typename T>
void scatter_plane(T* plane, long h, long w, T xs, T ys, T g) {
  const T fx = std::floor(xs), fy = std::floor(ys);
  const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
  const T ax = xs - fx, ay = ys - fy;
  auto add = [&](long yy, long xx, T v) {
    if (xx >= 0 && yy >= 0 && xx < w && yy < h) plane[yy * w + xx] += v;
  };
  add(y0, x0, g * (T(1) - ax) * (T(1) - ay));
  add(y0, x0 + 1, g * ax * (T(1) - ay));
  add(y0 + 1, x0, g * (T(1) - ax) * ay);
  add(y0 + 1, x0 + 1, g * ax * ay);
}

void check_sample_shapes(const Shape& in, const Shape& grid) {
  if (in.size() != 4) throw DimensionError("bilinear_sample: input must be NCHW, got " + shape_string(in));
  if (grid.size() != 4 || grid[3] != 2 || grid[0] != in[0]) {
    throw DimensionError("bilinear_sample: grid must be [N, H, W, 2] matching batch, got " + shape_string(grid));
  }
}

}  // namespace

Tensor<double> log_polar_grid(const PolarGridSpec& spec) {
  validate_grid(spec.height, spec.width, spec.max_radius);
  auto off = polar_offsets(spec.height, spec.width, spec.max_radius, spec.spacing);
  for (std::size_t i = 0; i < off.size(); i += 2) {
    off[i] += spec.x0;
    off[i + 1] += spec.y0;
  }
  return Tensor<double>(Shape{spec.height, spec.width, 2}, std::move(off));
}

template <typename T>
Var<T> polar_grid(Tape<T>& tape, const Var<T>& origin, std::size_t height, std::size_t width, double max_radius,
                  RadialSpacing spacing) {
  validate_grid(height, width, max_radius);
  if (origin.value().rank() != 2 || origin.dim(1) != 2) {
    throw DimensionError("polar_grid: origin must be [N, 2], got " + shape_string(origin.shape()));
  }
  const std::size_t n = origin.dim(0), cells = height * width;
  const auto off = polar_offsets(height, width, max_radius, spacing);
  Tensor<T> grid(Shape{n, height, width, 2});
  for (std::size_t i = 0; i < n; ++i) {
    const double ox = origin.value()[i * 2], oy = origin.value()[i * 2 + 1];
    for (std::size_t k = 0; k < cells; ++k) {
      grid[(i * cells + k) * 2] = static_cast<T>(ox + off[k * 2]);
      grid[(i * cells + k) * 2 + 1] = static_cast<T>(oy + off[k * 2 + 1]);
    }
  }
  Var<T> result(std::move(grid));
  Node<T>* on = origin.node();
  Node<T>* gn = result.node();
  tape.record("polar_grid", {origin}, result, [=]() {
    auto& d = on->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      double sx = 0, sy = 0;
      for (std::size_t k = 0; k < cells; ++k) {
        sx += gn->grad[(i * cells + k) * 2];
        sy += gn->grad[(i * cells + k) * 2 + 1];
      }
      d[i * 2] += static_cast<T>(sx);
      d[i * 2 + 1] += static_cast<T>(sy);
    }
  });
  return result;
}

template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& input, const Tensor<T>& grid) {
  check_sample_shapes(input.shape(), grid.shape());
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t ho = grid.dim(1), wo = grid.dim(2), cells = ho * wo;
  Tensor<T> out(Shape{n, c, ho, wo});
  parallel_for(n, [&](std::size_t i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* plane = input.raw() + (i * c + ch) * h * w;
      T* dst = out.raw() + (i * c + ch) * cells;
      for (std::size_t k = 0; k < cells; ++k) {
        dst[k] = sample_plane(plane, static_cast<long>(h), static_cast<long>(w), grid[(i * cells + k) * 2],
                              grid[(i * cells + k) * 2 + 1]);
      }
    }
  });
  return out;
}

template <typename T>
Var<T> bilinear_sample(Tape<T>& tape, const Var<T>& input, const Var<T>& grid) {
  Var<T> result(bilinear_sample(input.value(), grid.value()));
  Node<T>* in = input.node();
  Node<T>* gn = grid.node();
  Node<T>* on = result.node();
  tape.record("bilinear_sample", {input, grid}, result, [=]() {
    const std::size_t n = in->value.dim(0), c = in->value.dim(1), h = in->value.dim(2), w = in->value.dim(3);
    const std::size_t cells = gn->value.dim(1) * gn->value.dim(2);
    const auto& g = gn->value;
    const auto& dout = on->grad;
    if (in->requires_grad) {
      auto& dx = in->grad_buffer();
      parallel_for(n, [&](std::size_t i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          T* plane = dx.raw() + (i * c + ch) * h * w;
          const T* src = dout.raw() + (i * c + ch) * cells;
          for (std::size_t k = 0; k < cells; ++k) {
            scatter_plane(plane, static_cast<long>(h), static_cast<long>(w), g[(i * cells + k) * 2],
                          g[(i * cells + k) * 2 + 1], src[k]);
          }
        }
      });
    }
    if (gn->requires_grad) {
      auto& dg = gn->grad_buffer();
      parallel_for(n, [&](std::size_t i) {
        for (std::size_t k = 0; k < cells; ++k) {
          T gx = 0, gy = 0;
          for (std::size_t ch = 0; ch < c; ++ch) {
            T px = 0, py = 0;
            sample_plane(in->value.raw() + (i * c + ch) * h * w, static_cast<long>(h), static_cast<long>(w),
                         g[(i * cells + k) * 2], g[(i * cells + k) * 2 + 1], &px, &py);
            const T up = dout[(i * c + ch) * cells + k];
            gx += up * px;
            gy += up * py;
          }
          dg[(i * cells + k) * 2] += gx;
          dg[(i * cells + k) * 2 + 1] += gy;
        }
      });
    }
  });
  return result;
}

template <typename T>
Var<T> clamp_origin(Tape<T>& tape, const Var<T>& origin, std::size_t height, std::size_t width) {
  if (origin.value().rank() != 2 || origin.dim(1) != 2) {
    throw DimensionError("clamp_origin: origin must be [N, 2], got " + shape_string(origin.shape()));
  }
  const T hi[2] = {static_cast<T>(width) - T(1), static_cast<T>(height) - T(1)};
  Tensor<T> out(origin.shape());
  auto inside = std::make_shared<std::vector<bool>>(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = origin.value()[i];
    const T top = hi[i % 2];
    out[i] = v < T(0) ? T(0) : (v > top ? top : v);
    (*inside)[i] = v >= T(0) && v <= top;
  }
  Var<T> result(std::move(out));
  Node<T>* on = origin.node();
  Node<T>* rn = result.node();
  tape.record("clamp_origin", {origin}, result, [=]() {
    auto& d = on->grad_buffer();
    for (std::size_t i = 0; i < d.size(); ++i)
      if ((*inside)[i]) d[i] += rn->grad[i];
  });
  return result;
}

template <typename T>
Var<T> polar_transform(Tape<T>& tape, const Var<T>& input, const Var<T>& origin, std::size_t out_height,
                       std::size_t out_width, double max_radius, RadialSpacing spacing) {
  if (input.value().rank() != 4) throw DimensionError("polar_transform: input must be NCHW");
  const std::size_t h = input.dim(2), w = input.dim(3);
  if (max_radius <= 0.0) max_radius = PolarGridSpec::default_max_radius(h, w);
  auto clamped = clamp_origin(tape, origin, h, w);
  auto grid = polar_grid(tape, clamped, out_height, out_width, max_radius, spacing);
  return bilinear_sample(tape, input, grid);
}

template <typename T>
Var<T> cylindrical_transform(Tape<T>& tape, const Var<T>& volume, const Var<T>& origin, std::size_t out_height,
                             std::size_t out_width, double max_radius, RadialSpacing spacing) {
  const auto& s = volume.shape();
  if (s.size() != 5) throw DimensionError("cylindrical_transform: volume must be N x C x D x H x W");
  auto slices = reshape(tape, volume, Shape{s[0], s[1] * s[2], s[3], s[4]});
  auto polar = polar_transform(tape, slices, origin, out_height, out_width, max_radius, spacing);
  return reshape(tape, polar, Shape{s[0], s[1], s[2], out_height, out_width});
}

namespace {

template <typename T>
bool exact_quarter_turn(const Tensor<T>& input, const Sim2Params& p, std::size_t oh, std::size_t ow, int& quarter) {
  if (p.scale != 1.0 || p.dx != 0.0 || p.dy != 0.0) return false;
  const std::size_t h = input.dim(2), w = input.dim(3);
  if (h != w || oh != h || ow != w) return false;
  const double q = p.angle / (std::numbers::pi / 2.0);
  const double k = std::round(q);
  if (std::abs(q - k) > 1e-12) return false;
  quarter = static_cast<int>(((static_cast<long>(k) % 4) + 4) % 4);
  return true;
}

}  // namespace

template <typename T>
Tensor<T> similarity_warp(const Tensor<T>& input, const Sim2Params& params, std::size_t out_height,
                          std::size_t out_width) {
  if (input.rank() != 4) throw DimensionError("similarity_warp: input must be NCHW");
  if (!(params.scale > 0.0)) throw ArgumentError("similarity_warp: scale must be positive");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = out_height ? out_height : h, ow = out_width ? out_width : w;

  int quarter = 0;
  if (exact_quarter_turn(input, params, oh, ow, quarter)) {
    Tensor<T> out(input.shape());
    const std::size_t last = w - 1;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) {
            std::size_t sy = y, sx = x;
            switch (quarter) {
              case 1: sy = last - x; sx = y; break;
              case 2: sy = last - y; sx = last - x; break;
              case 3: sy = x; sx = last - y; break;
              default: break;
            }
            out.at(i, ch, y, x) = input.at(i, ch, sy, sx);
          }
    return out;
  }

  const double cxi = (static_cast<double>(w) - 1.0) / 2.0, cyi = (static_cast<double>(h) - 1.0) / 2.0;
  const double cxo = (static_cast<double>(ow) - 1.0) / 2.0, cyo = (static_cast<double>(oh) - 1.0) / 2.0;
  const double co = std::cos(params.angle), si = std::sin(params.angle);
  Tensor<T> grid(Shape{n, oh, ow, 2});
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      const double ux = (static_cast<double>(x) - cxo - params.dx) / params.scale;
      const double uy = (static_cast<double>(y) - cyo - params.dy) / params.scale;
      const double qx = co * ux + si * uy + cxi;
      const double qy = -si * ux + co * uy + cyi;
      for (std::size_t i = 0; i < n; ++i) {
        grid[((i * oh + y) * ow + x) * 2] = static_cast<T>(qx);
        grid[((i * oh + y) * ow + x) * 2 + 1] = static_cast<T>(qy);
      }
    }
  return bilinear_sample(input, grid);
}

template <typename T>
Tensor<T> warp_about(const Tensor<T>& input, double angle, double scale, double cx, double cy) {
  if (input.rank() != 4) throw DimensionError("warp_about: input must be NCHW");
  if (!(scale > 0.0)) throw ArgumentError("warp_about: scale must be positive");
  const std::size_t n = input.dim(0), h = input.dim(2), w = input.dim(3);
  const double co = std::cos(angle), si = std::sin(angle);
  Tensor<T> grid(Shape{n, h, w, 2});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double ux = (static_cast<double>(x) - cx) / scale;
      const double uy = (static_cast<double>(y) - cy) / scale;
      for (std::size_t i = 0; i < n; ++i) {
        grid[((i * h + y) * w + x) * 2] = static_cast<T>(co * ux + si * uy + cx);
        grid[((i * h + y) * w + x) * 2 + 1] = static_cast<T>(-si * ux + co * uy + cy);
      }
    }
  return bilinear_sample(input, grid);
}

#define PTN_INSTANTIATE_SAMPLER(T)                                                                                 \
  template Var<T> polar_grid(Tape<T>&, const Var<T>&, std::size_t, std::size_t, double, RadialSpacing);            \
  template Var<T> bilinear_sample(Tape<T>&, const Var<T>&, const Var<T>&);                                         \
  template Tensor<T> bilinear_sample(const Tensor<T>&, const Tensor<T>&);                                          \
  template Var<T> clamp_origin(Tape<T>&, const Var<T>&, std::size_t, std::size_t);                                 \
  template Var<T> polar_transform(Tape<T>&, const Var<T>&, const Var<T>&, std::size_t, std::size_t, double,        \
                                  RadialSpacing);                                                                  \
  template Var<T> cylindrical_transform(Tape<T>&, const Var<T>&, const Var<T>&, std::size_t, std::size_t, double, \
                                        RadialSpacing);                                                            \
  template Tensor<T> similarity_warp(const Tensor<T>&, const Sim2Params&, std::size_t, std::size_t);              \
  template Tensor<T> warp_about(const Tensor<T>&, double, double, double, double);

PTN_INSTANTIATE_SAMPLER(float)
PTN_INSTANTIATE_SAMPLER(double)

}  // namespace ptn
