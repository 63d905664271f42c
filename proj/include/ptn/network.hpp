#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ptn/ops.hpp"
#include "ptn/sampler.hpp"

namespace ptn {

/// 3x3 conv -> batch norm -> relu.
struct BlockSpec {
  int filters = 0;
  int stride = 1;
  PaddingMode padding;
};

enum class Variant { ptn_s, ptn_b, ccnn_s, ccnn_b, pcnn_s, pcnn_b };

std::string variant_name(Variant v);
/// Accepts "ptn-s", "PTN-S", "ptn_s" and so on. Throws ConfigError.
Variant parse_variant(const std::string& name);
bool is_ptn(Variant v);
bool is_pcnn(Variant v);
bool is_polar(Variant v);

struct Augmentation {
  bool rotation = true;
  /// Uniform origin jitter per axis, as a fraction of the input width.
  double origin_shift = 0.05;
  int test_time_rotations = 1;
};

struct NetworkConfig {
  Variant variant = Variant::ptn_s;
  std::size_t input_size = 28;
  std::size_t in_channels = 1;
  std::size_t classes = 10;
  std::vector<BlockSpec> origin_blocks;  // followed by a 1x1 conv to one channel
  std::vector<BlockSpec> classifier_blocks;
  std::size_t polar_height = 28;
  std::size_t polar_width = 28;
  double polar_radius = 0.0;  // <= 0: half the input diagonal
  RadialSpacing spacing = RadialSpacing::logarithmic;
  Augmentation augmentation;

  /// Standard architecture for `variant` on square inputs of `input_size`.
  /// With `wrap` false, polar classifiers fall back to zero padding.
  static NetworkConfig make(Variant variant, std::size_t input_size, bool wrap = true);

  int origin_stride_product() const;
  int classifier_stride_product() const;
};

template <typename T>
struct ConvBlock {
  Var<T> kernel;
  Var<T> gamma;
  Var<T> beta;
  BatchNormState<T> stats;
  int stride = 1;
  PaddingMode padding;
};

template <typename T>
struct Model {
  NetworkConfig config;
  std::vector<ConvBlock<T>> origin;
  Var<T> heatmap_kernel;  // 1x1, no bias: softmax ignores a constant offset
  std::vector<ConvBlock<T>> classifier;
  Var<T> head_kernel;
  Var<T> head_bias;

  /// Trainable tensors in a fixed order.
  std::vector<Var<T>> parameters() const;
  std::size_t parameter_count() const;

  /// Parameters plus batch-norm running statistics, keyed by stable names.
  std::vector<std::pair<std::string, Tensor<T>>> state() const;
  /// Throws ConfigError on a missing name or mismatched extents.
  void load_state(const std::map<std::string, Tensor<T>>& tensors);

  template <typename U>
  Model<U> cast() const;
};

/// He-uniform (fan-in) kernels, gamma 1, beta 0, zero bias. Deterministic in `seed`.
template <typename T>
Model<T> build(const NetworkConfig& config, std::uint64_t seed);

/// Exact trainable-parameter count implied by a config.
std::size_t count_parameters(const NetworkConfig& config);

template <typename T>
struct ForwardTrace {
  Var<T> heatmap;       // normalized, N x 1 x h x w
  Var<T> origin_map;    // heatmap frame, N x 2 (x, y)
  Var<T> origin;        // input frame after any augmentation, N x 2
  Var<T> polar;         // classifier input
  std::vector<Var<T>> features;  // every block output, when retained
  Var<T> last_features;          // final block output
  Var<T> logits;
};

struct ForwardOptions {
  bool retain_features = false;
  /// Bypasses the origin predictor with fixed per-item input-frame origins (N x 2 values).
  std::optional<std::vector<double>> fixed_origin;
};

/// Origin predictor -> softmax -> centroid -> input frame (+ jitter in train mode)
/// -> polar transform -> classifier, all on `tape`. `rng` is used only for
/// training-mode origin jitter and may be null otherwise.
template <typename T>
ForwardTrace<T> forward_ptn(Tape<T>& tape, Model<T>& model, const Var<T>& batch, Mode mode,
                            std::mt19937_64* rng = nullptr, const ForwardOptions& options = {});

/// Classifier stack and head on an already prepared input (polar image or Cartesian image).
template <typename T>
ForwardTrace<T> forward_classifier(Tape<T>& tape, Model<T>& model, const Var<T>& input, Mode mode,
                                   bool retain_features = false);

/// CCNN: classifier on the image. PCNN: classifier on the polar transform about the image center.
template <typename T>
Var<T> forward_baseline(Tape<T>& tape, Model<T>& model, const Var<T>& batch, Mode mode);

/// Dispatches on the variant.
template <typename T>
Var<T> forward_logits(Tape<T>& tape, Model<T>& model, const Var<T>& batch, Mode mode,
                      std::mt19937_64* rng = nullptr);

/// Rotates each item by an independent uniform angle in [0, 2pi) about the image center.
template <typename T>
Tensor<T> augment_rotation(const Tensor<T>& batch, std::mt19937_64& rng);

/// Summed eval-mode logits over `n_rotations` evenly spaced rotations of every item.
template <typename T>
Tensor<T> tta_scores(Model<T>& model, const Tensor<T>& batch, int n_rotations);

/// Argmax of summed scores; ties go to the lowest class index.
template <typename T>
std::vector<int> predict_tta(Model<T>& model, const Tensor<T>& batch, int n_rotations);

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& scores);

}  // namespace ptn
