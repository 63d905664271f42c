#pragma once

#include <span>

#include "ptn/autodiff.hpp"

namespace ptn {

enum class VerticalPadding { zero, wrap };
enum class HorizontalPadding { zero };

/// Same-size padding of floor(k/2) per side. Wrap identifies the first and last
/// rows (the angular axis of a polar map); columns are always zero padded.
struct PaddingMode {
  VerticalPadding vertical = VerticalPadding::zero;
  HorizontalPadding horizontal = HorizontalPadding::zero;

  static PaddingMode zeros() { return {}; }
  static PaddingMode wrap_rows() { return {VerticalPadding::wrap, HorizontalPadding::zero}; }
  bool operator==(const PaddingMode&) const = default;
};

enum class Mode { train, eval };

/// Cross-correlation (no kernel flip) of NCHW input with an OIKhKw kernel.
///
/// Output extent is ceil(in / stride) on each axis; output pixel (i, j) is
/// centered on input pixel (i * stride, j * stride). With wrap padding the row
/// index is taken modulo H. `bias` may be a null Var.
template <typename T>
Var<T> conv2d(Tape<T>& tape, const Var<T>& input, const Var<T>& kernel, const Var<T>& bias, int stride,
              PaddingMode padding);

template <typename T>
Var<T> conv2d(Tape<T>& tape, const Var<T>& input, const Var<T>& kernel, int stride, PaddingMode padding) {
  return conv2d(tape, input, kernel, Var<T>(), stride, padding);
}

template <typename T>
Var<T> relu(Tape<T>& tape, const Var<T>& input);

/// Running statistics owned by a batch-norm layer, updated in train mode.
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(Shape{channels}, T(0)), running_var(Shape{channels}, T(1)) {}
};

/// Per-channel normalization over N, H, W. Train mode uses batch statistics and
/// updates `state` as (1 - momentum) * old + momentum * batch (unbiased variance);
/// eval mode normalizes with the running statistics.
template <typename T>
Var<T> batch_norm(Tape<T>& tape, const Var<T>& input, const Var<T>& gamma, const Var<T>& beta,
                  BatchNormState<T>& state, Mode mode, double momentum = 0.1, double epsilon = 1e-5);

/// NCHW -> NC spatial mean.
template <typename T>
Var<T> global_average_pool(Tape<T>& tape, const Var<T>& input);

/// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Var<T> softmax_cross_entropy(Tape<T>& tape, const Var<T>& logits, std::span<const int> labels);

template <typename T>
Var<T> sum(Tape<T>& tape, const Var<T>& input);

/// sum_i weights[i] * input[i]; the weights are constants.
template <typename T>
Var<T> weighted_sum(Tape<T>& tape, const Var<T>& input, const Tensor<T>& weights);

template <typename T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b);

/// input + offset, where `offset` is a constant of the same shape.
template <typename T>
Var<T> add_constant(Tape<T>& tape, const Var<T>& input, const Tensor<T>& offset);

/// View with a new shape and the same element order.
template <typename T>
Var<T> reshape(Tape<T>& tape, const Var<T>& input, Shape shape);

}  // namespace ptn
