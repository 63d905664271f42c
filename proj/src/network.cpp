#include "ptn/network.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>

#include "ptn/errors.hpp"
#include "ptn/origin.hpp"

namespace ptn {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::ptn_s: return "ptn-s";
    case Variant::ptn_b: return "ptn-b";
    case Variant::ccnn_s: return "ccnn-s";
    case Variant::ccnn_b: return "ccnn-b";
    case Variant::pcnn_s: return "pcnn-s";
    case Variant::pcnn_b: return "pcnn-b";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  std::string key;
  for (char c : name) key += c == '_' ? '-' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (Variant v : {Variant::ptn_s, Variant::ptn_b, Variant::ccnn_s, Variant::ccnn_b, Variant::pcnn_s, Variant::pcnn_b})
    if (variant_name(v) == key) return v;
  throw ConfigError("unknown variant '" + name + "' (expected ptn-s, ptn-b, ccnn-s, ccnn-b, pcnn-s or pcnn-b)");
}

bool is_ptn(Variant v) { return v == Variant::ptn_s || v == Variant::ptn_b; }
bool is_pcnn(Variant v) { return v == Variant::pcnn_s || v == Variant::pcnn_b; }
bool is_polar(Variant v) { return is_ptn(v) || is_pcnn(v); }

namespace {

bool is_small(Variant v) { return v == Variant::ptn_s || v == Variant::ccnn_s || v == Variant::pcnn_s; }

// Inputs beyond MNIST size get stride-2 blocks of 16 filters up front.
int extra_blocks(std::size_t input_size) {
  if (input_size >= 64) return 2;
  if (input_size > 28) return 1;
  return 0;
}

template <typename T>
Var<T> he_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return Var<T>(std::move(t), true);
}

template <typename T>
ConvBlock<T> make_block(const BlockSpec& spec, std::size_t in_channels, std::mt19937_64& rng) {
  const auto f = static_cast<std::size_t>(spec.filters);
  ConvBlock<T> b;
  b.kernel = he_uniform<T>({f, in_channels, 3, 3}, in_channels * 9, rng);
  b.gamma = Var<T>(Tensor<T>({f}, T(1)), true);
  b.beta = Var<T>(Tensor<T>({f}, T(0)), true);
  b.stats = BatchNormState<T>(f);
  b.stride = spec.stride;
  b.padding = spec.padding;
  return b;
}

template <typename T>
Var<T> run_block(Tape<T>& tape, ConvBlock<T>& b, const Var<T>& x, Mode mode) {
  auto y = conv2d(tape, x, b.kernel, b.stride, b.padding);
  y = batch_norm(tape, y, b.gamma, b.beta, b.stats, mode);
  return relu(tape, y);
}

std::size_t block_params(std::size_t cin, std::size_t f) { return cin * f * 9 + 2 * f; }

template <typename T>
Tensor<T> item(const Tensor<T>& batch, std::size_t n) {
  Shape s = batch.shape();
  const std::size_t per = shape_size(s) / s[0];
  s[0] = 1;
  Tensor<T> out(s);
  std::copy_n(batch.raw() + n * per, per, out.raw());
  return out;
}

template <typename T>
void put_item(Tensor<T>& batch, std::size_t n, const Tensor<T>& one) {
  std::copy_n(one.raw(), one.size(), batch.raw() + n * one.size());
}

template <typename T>
Tensor<T> rotate_batch(const Tensor<T>& batch, const std::vector<double>& angles) {
  Tensor<T> out(batch.shape());
  for (std::size_t n = 0; n < batch.dim(0); ++n)
    put_item(out, n, similarity_warp(item(batch, n), Sim2Params{angles[n], 1.0, 0.0, 0.0}));
  return out;
}

}  // namespace

NetworkConfig NetworkConfig::make(Variant variant, std::size_t input_size, bool wrap) {
  if (input_size < 4) throw ConfigError("input size must be at least 4");
  NetworkConfig c;
  c.variant = variant;
  c.input_size = input_size;
  c.polar_height = input_size;
  c.polar_width = input_size;

  const PaddingMode pad = is_polar(variant) && wrap ? PaddingMode::wrap_rows() : PaddingMode::zeros();
  for (int i = 0; i < extra_blocks(input_size); ++i) c.classifier_blocks.push_back({16, 2, pad});
  if (is_small(variant)) {
    for (int i = 0; i < 7; ++i) c.classifier_blocks.push_back({20, i == 2 ? 2 : 1, pad});
  } else {
    const int filters[] = {16, 16, 32, 32, 32, 64, 64, 64};
    for (int i = 0; i < 8; ++i) c.classifier_blocks.push_back({filters[i], i == 2 || i == 5 ? 2 : 1, pad});
  }
  if (is_ptn(variant)) {
    const int strided = input_size >= 64 ? 2 : 1;
    for (int i = 0; i < 3; ++i) c.origin_blocks.push_back({20, i < strided ? 2 : 1, PaddingMode::zeros()});
  }
  return c;
}

int NetworkConfig::origin_stride_product() const {
  int s = 1;
  for (const auto& b : origin_blocks) s *= b.stride;
  return s;
}

int NetworkConfig::classifier_stride_product() const {
  int s = 1;
  for (const auto& b : classifier_blocks) s *= b.stride;
  return s;
}

std::size_t count_parameters(const NetworkConfig& c) {
  std::size_t total = 0, cin = c.in_channels;
  for (const auto& b : c.origin_blocks) {
    total += block_params(cin, static_cast<std::size_t>(b.filters));
    cin = static_cast<std::size_t>(b.filters);
  }
  if (!c.origin_blocks.empty()) total += cin;
  cin = c.in_channels;
  for (const auto& b : c.classifier_blocks) {
    total += block_params(cin, static_cast<std::size_t>(b.filters));
    cin = static_cast<std::size_t>(b.filters);
  }
  return total + cin * c.classes + c.classes;
}

template <typename T>
std::vector<Var<T>> Model<T>::parameters() const {
  std::vector<Var<T>> out;
  for (const auto& b : origin) out.insert(out.end(), {b.kernel, b.gamma, b.beta});
  if (heatmap_kernel) out.push_back(heatmap_kernel);
  for (const auto& b : classifier) out.insert(out.end(), {b.kernel, b.gamma, b.beta});
  out.push_back(head_kernel);
  out.push_back(head_bias);
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.value().size();
  return n;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> Model<T>::state() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  auto blocks = [&](const std::string& prefix, const std::vector<ConvBlock<T>>& list) {
    for (std::size_t i = 0; i < list.size(); ++i) {
      const std::string p = prefix + "." + std::to_string(i) + ".";
      out.emplace_back(p + "kernel", list[i].kernel.value());
      out.emplace_back(p + "gamma", list[i].gamma.value());
      out.emplace_back(p + "beta", list[i].beta.value());
      out.emplace_back(p + "running_mean", list[i].stats.running_mean);
      out.emplace_back(p + "running_var", list[i].stats.running_var);
    }
  };
  blocks("origin", origin);
  if (heatmap_kernel) out.emplace_back("origin.heatmap.kernel", heatmap_kernel.value());
  blocks("classifier", classifier);
  out.emplace_back("head.kernel", head_kernel.value());
  out.emplace_back("head.bias", head_bias.value());
  return out;
}

template <typename T>
void Model<T>::load_state(const std::map<std::string, Tensor<T>>& tensors) {
  auto fetch = [&](const std::string& name, Tensor<T>& dst) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ConfigError("checkpoint lacks tensor '" + name + "'");
    if (it->second.shape() != dst.shape())
      throw ConfigError("tensor '" + name + "' has shape " + shape_string(it->second.shape()) + ", model expects " +
                        shape_string(dst.shape()));
    dst = it->second;
  };
  auto blocks = [&](const std::string& prefix, std::vector<ConvBlock<T>>& list) {
    for (std::size_t i = 0; i < list.size(); ++i) {
      const std::string p = prefix + "." + std::to_string(i) + ".";
      fetch(p + "kernel", list[i].kernel.value());
      fetch(p + "gamma", list[i].gamma.value());
      fetch(p + "beta", list[i].beta.value());
      fetch(p + "running_mean", list[i].stats.running_mean);
      fetch(p + "running_var", list[i].stats.running_var);
    }
  };
  blocks("origin", origin);
  if (heatmap_kernel) fetch("origin.heatmap.kernel", heatmap_kernel.value());
  blocks("classifier", classifier);
  fetch("head.kernel", head_kernel.value());
  fetch("head.bias", head_bias.value());
  if (tensors.size() != state().size()) throw ConfigError("checkpoint holds tensors the model does not use");
}

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
  Model<U> m;
  m.config = config;
  auto var = [](const Var<T>& v) { return v ? Var<U>(v.value().template cast<U>(), true) : Var<U>(); };
  auto blocks = [&](const std::vector<ConvBlock<T>>& src) {
    std::vector<ConvBlock<U>> dst;
    for (const auto& b : src) {
      ConvBlock<U> c;
      c.kernel = var(b.kernel);
      c.gamma = var(b.gamma);
      c.beta = var(b.beta);
      c.stats.running_mean = b.stats.running_mean.template cast<U>();
      c.stats.running_var = b.stats.running_var.template cast<U>();
      c.stride = b.stride;
      c.padding = b.padding;
      dst.push_back(std::move(c));
    }
    return dst;
  };
  m.origin = blocks(origin);
  m.heatmap_kernel = var(heatmap_kernel);
  m.classifier = blocks(classifier);
  m.head_kernel = var(head_kernel);
  m.head_bias = var(head_bias);
  return m;
}

template <typename T>
Model<T> build(const NetworkConfig& config, std::uint64_t seed) {
  if (config.classifier_blocks.empty()) throw ConfigError("classifier needs at least one block");
  if (is_ptn(config.variant) && config.origin_blocks.empty()) throw ConfigError("PTN needs origin predictor blocks");
  std::mt19937_64 rng(seed);
  Model<T> m;
  m.config = config;
  std::size_t cin = config.in_channels;
  for (const auto& spec : config.origin_blocks) {
    m.origin.push_back(make_block<T>(spec, cin, rng));
    cin = static_cast<std::size_t>(spec.filters);
  }
  if (!config.origin_blocks.empty()) m.heatmap_kernel = he_uniform<T>({1, cin, 1, 1}, cin, rng);
  cin = config.in_channels;
  for (const auto& spec : config.classifier_blocks) {
    m.classifier.push_back(make_block<T>(spec, cin, rng));
    cin = static_cast<std::size_t>(spec.filters);
  }
  m.head_kernel = he_uniform<T>({config.classes, cin, 1, 1}, cin, rng);
  m.head_bias = Var<T>(Tensor<T>({config.classes}, T(0)), true);
  return m;
}

template <typename T>
ForwardTrace<T> forward_classifier(Tape<T>& tape, Model<T>& model, const Var<T>& input, Mode mode,
                                   bool retain_features) {
  ForwardTrace<T> trace;
  trace.polar = input;
  Var<T> x = input;
  for (auto& b : model.classifier) {
    x = run_block(tape, b, x, mode);
    if (retain_features) trace.features.push_back(x);
  }
  trace.last_features = x;
  auto scores = conv2d(tape, x, model.head_kernel, model.head_bias, 1, PaddingMode::zeros());
  trace.logits = global_average_pool(tape, scores);
  return trace;
}

template <typename T>
ForwardTrace<T> forward_ptn(Tape<T>& tape, Model<T>& model, const Var<T>& batch, Mode mode, std::mt19937_64* rng,
                            const ForwardOptions& options) {
  const auto& cfg = model.config;
  const std::size_t n = batch.dim(0), w = batch.dim(3);
  Var<T> heatmap, origin_map, origin;
  if (options.fixed_origin) {
    if (options.fixed_origin->size() != n * 2) throw DimensionError("fixed origin needs N x 2 values");
    Tensor<T> o({n, 2});
    for (std::size_t i = 0; i < n * 2; ++i) o[i] = static_cast<T>((*options.fixed_origin)[i]);
    origin = Var<T>(std::move(o));
  } else {
    Var<T> x = batch;
    for (auto& b : model.origin) x = run_block(tape, b, x, mode);
    auto raw = conv2d(tape, x, model.heatmap_kernel, 1, PaddingMode::zeros());
    heatmap = spatial_softmax(tape, raw);
    origin_map = centroid(tape, heatmap);
    origin = to_input_frame(tape, origin_map, cfg.origin_stride_product());
    if (mode == Mode::train && rng && cfg.augmentation.origin_shift > 0) {
      const double amp = cfg.augmentation.origin_shift * static_cast<double>(w);
      std::uniform_real_distribution<double> jitter(-amp, amp);
      Tensor<T> offset({n, 2});
      for (auto& v : offset.data()) v = static_cast<T>(jitter(*rng));
      origin = add_constant(tape, origin, offset);
    }
  }
  auto polar = polar_transform(tape, batch, origin, cfg.polar_height, cfg.polar_width, cfg.polar_radius, cfg.spacing);
  auto trace = forward_classifier(tape, model, polar, mode, options.retain_features);
  trace.heatmap = heatmap;
  trace.origin_map = origin_map;
  trace.origin = origin;
  return trace;
}

template <typename T>
Var<T> forward_baseline(Tape<T>& tape, Model<T>& model, const Var<T>& batch, Mode mode) {
  const auto& cfg = model.config;
  if (!is_pcnn(cfg.variant)) return forward_classifier(tape, model, batch, mode).logits;
  const std::size_t n = batch.dim(0);
  Tensor<T> center({n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    center[i * 2] = static_cast<T>((static_cast<double>(batch.dim(3)) - 1.0) / 2.0);
    center[i * 2 + 1] = static_cast<T>((static_cast<double>(batch.dim(2)) - 1.0) / 2.0);
  }
  auto polar = polar_transform(tape, batch, Var<T>(std::move(center)), cfg.polar_height, cfg.polar_width,
                               cfg.polar_radius, cfg.spacing);
  return forward_classifier(tape, model, polar, mode).logits;
}

template <typename T>
Var<T> forward_logits(Tape<T>& tape, Model<T>& model, const Var<T>& batch, Mode mode, std::mt19937_64* rng) {
  if (is_ptn(model.config.variant)) return forward_ptn(tape, model, batch, mode, rng).logits;
  return forward_baseline(tape, model, batch, mode);
}

template <typename T>
Tensor<T> augment_rotation(const Tensor<T>& batch, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::vector<double> angles(batch.dim(0));
  for (auto& a : angles) a = angle(rng);
  return rotate_batch(batch, angles);
}

template <typename T>
Tensor<T> tta_scores(Model<T>& model, const Tensor<T>& batch, int n_rotations) {
  if (n_rotations < 1) throw ArgumentError("test-time rotations must be at least 1");
  Tape<T> tape;
  tape.set_recording(false);
  Tensor<T> total({batch.dim(0), model.config.classes});
  for (int r = 0; r < n_rotations; ++r) {
    const double a = 2.0 * std::numbers::pi * r / n_rotations;
    Tensor<T> input = r == 0 ? batch : rotate_batch(batch, std::vector<double>(batch.dim(0), a));
    auto logits = forward_logits(tape, model, Var<T>(std::move(input)), Mode::eval);
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += logits.value()[i];
  }
  return total;
}

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& scores) {
  const std::size_t n = scores.dim(0), k = scores.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (scores[i * k + c] > scores[i * k + best]) best = c;
    out[i] = static_cast<int>(best);
  }
  return out;
}

template <typename T>
std::vector<int> predict_tta(Model<T>& model, const Tensor<T>& batch, int n_rotations) {
  return argmax_rows(tta_scores(model, batch, n_rotations));
}

#define PTN_INSTANTIATE_NETWORK(T)                                                                                  \
  template struct Model<T>;                                                                                         \
  template Model<T> build<T>(const NetworkConfig&, std::uint64_t);                                                  \
  template ForwardTrace<T> forward_ptn<T>(Tape<T>&, Model<T>&, const Var<T>&, Mode, std::mt19937_64*,               \
                                          const ForwardOptions&);                                                   \
  template ForwardTrace<T> forward_classifier<T>(Tape<T>&, Model<T>&, const Var<T>&, Mode, bool);                   \
  template Var<T> forward_baseline<T>(Tape<T>&, Model<T>&, const Var<T>&, Mode);                                    \
  template Var<T> forward_logits<T>(Tape<T>&, Model<T>&, const Var<T>&, Mode, std::mt19937_64*);                    \
  template Tensor<T> augment_rotation<T>(const Tensor<T>&, std::mt19937_64&);                                       \
  template Tensor<T> tta_scores<T>(Model<T>&, const Tensor<T>&, int);                                               \
  template std::vector<int> argmax_rows<T>(const Tensor<T>&);                                                       \
  template std::vector<int> predict_tta<T>(Model<T>&, const Tensor<T>&, int);

PTN_INSTANTIATE_NETWORK(float)
PTN_INSTANTIATE_NETWORK(double)

template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;
template Model<float> Model<float>::cast<float>() const;
template Model<double> Model<double>::cast<double>() const;

}  // namespace ptn
