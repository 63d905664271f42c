#pragma once

#include "ptn/autodiff.hpp"

namespace ptn {

/// Per-item softmax over the spatial positions of an N x 1 x H x W map.
/// The result is strictly positive and sums to one per item.
template <typename T>
Var<T> spatial_softmax(Tape<T>& tape, const Var<T>& raw);

/// Probability-weighted mean pixel coordinate of a normalized heatmap,
/// N x 1 x H x W -> N x 2 as (x, y). Pixel (row i, col j) has coordinate (j, i).
template <typename T>
Var<T> centroid(Tape<T>& tape, const Var<T>& heatmap);

/// Maps heatmap-frame coordinates to input pixels: s * o + (s - 1) / 2 for stride product s.
template <typename T>
Var<T> to_input_frame(Tape<T>& tape, const Var<T>& origin, int stride_product);

}  // namespace ptn
