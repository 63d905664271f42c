#pragma once

#include <optional>

#include "ptn/autodiff.hpp"

namespace ptn {

enum class RadialSpacing { logarithmic, linear };

/// Parameters of a polar resampling grid.
///
/// Output row y spans the angle 2*pi*y/H, output column x the radius
/// max_radius^(x/W) (logarithmic) or max_radius*x/W (linear). Coordinates are
/// continuous pixel coordinates of the input: pixel (row i, col j) sits at (x=j, y=i).
struct PolarGridSpec {
  double x0 = 0.0;
  double y0 = 0.0;
  std::size_t height = 0;
  std::size_t width = 0;
  double max_radius = 0.0;
  RadialSpacing spacing = RadialSpacing::logarithmic;

  /// Half the diagonal of the input image.
  static double default_max_radius(std::size_t input_height, std::size_t input_width);
};

/// Source coordinate grid with shape H x W x 2 (x, y) for a single origin.
/// Throws ArgumentError for a non-positive radius or empty output.
Tensor<double> log_polar_grid(const PolarGridSpec& spec);

/// Radius sampled by output column `column` of a grid with `width` columns.
double polar_radius(double column, std::size_t width, double max_radius, RadialSpacing spacing);

/// Batched grid from per-item origins [N, 2] -> [N, H, W, 2]. Every grid entry
/// depends on the origin with unit derivative.
template <typename T>
Var<T> polar_grid(Tape<T>& tape, const Var<T>& origin, std::size_t height, std::size_t width, double max_radius,
                  RadialSpacing spacing = RadialSpacing::logarithmic);

/// Bilinear resampling of NCHW `input` at grid [N, H', W', 2] -> [N, C, H', W'].
/// Neighbors outside the input contribute zero. Differentiable with respect to
/// both the input values and the grid coordinates.
template <typename T>
Var<T> bilinear_sample(Tape<T>& tape, const Var<T>& input, const Var<T>& grid);

template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& input, const Tensor<T>& grid);

/// Clamps [N, 2] origins into [0, width-1] x [0, height-1]. The clamped region has zero gradient.
template <typename T>
Var<T> clamp_origin(Tape<T>& tape, const Var<T>& origin, std::size_t height, std::size_t width);

/// Log-polar (or plain polar) transform of NCHW `input` about per-item origins [N, 2].
/// A non-positive `max_radius` selects the default half-diagonal of the input.
template <typename T>
Var<T> polar_transform(Tape<T>& tape, const Var<T>& input, const Var<T>& origin, std::size_t out_height,
                       std::size_t out_width, double max_radius = 0.0,
                       RadialSpacing spacing = RadialSpacing::logarithmic);

/// Polar transform of every depth slice of an N x C x D x H x W volume about a
/// shared per-item origin. Linear radius by default.
template <typename T>
Var<T> cylindrical_transform(Tape<T>& tape, const Var<T>& volume, const Var<T>& origin, std::size_t out_height,
                             std::size_t out_width, double max_radius = 0.0,
                             RadialSpacing spacing = RadialSpacing::linear);

/// Element of SIM(2): x -> scale * R(angle) * x + shift.
struct Sim2Params {
  double angle = 0.0;
  double scale = 1.0;
  double dx = 0.0;
  double dy = 0.0;
};

/// Resamples NCHW `input` so that content at input point q lands at
/// scale * R(angle) * (q - center_in) + center_out + shift, where the centers are
/// the image centers ((W-1)/2, (H-1)/2). Output is out_height x out_width (input size
/// when zero). Bilinear, zero outside. Multiples of 90 degrees without scaling or
/// shifting on a same-size square image are exact index permutations.
template <typename T>
Tensor<T> similarity_warp(const Tensor<T>& input, const Sim2Params& params, std::size_t out_height = 0,
                          std::size_t out_width = 0);

/// Rotation by `angle` and isotropic scaling about an arbitrary point, same-size output.
template <typename T>
Tensor<T> warp_about(const Tensor<T>& input, double angle, double scale, double cx, double cy);

}  // namespace ptn
