#include "ptn/gradcheck_suite.hpp"

#include <random>

#include "ptn/ops.hpp"
#include "ptn/origin.hpp"
#include "ptn/sampler.hpp"

namespace ptn {

namespace {

using Inputs = std::span<const Var<double>>;

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

// Coordinates kept at least 0.1 px from integers, where bilinear weights kink.
Tensor<double> off_grid(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) {
    do v = u(rng);
    while (std::abs(v - std::round(v)) < 0.1);
  }
  return t;
}

}  // namespace

std::vector<SuiteEntry> gradcheck_suite(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<SuiteEntry> out;

  for (auto [name, pad] : {std::pair{"conv2d-zero", PaddingMode::zeros()}, std::pair{"conv2d-wrap", PaddingMode::wrap_rows()}}) {
    for (int stride : {1, 2}) {
      auto x = random_tensor({2, 3, 7, 6}, rng);
      auto k = random_tensor({4, 3, 3, 3}, rng);
      auto b = random_tensor({4}, rng);
      const std::size_t oh = (7 + stride - 1) / stride, ow = (6 + stride - 1) / stride;
      auto w = random_tensor({2, 4, oh, ow}, rng);
      auto r = gradcheck([&, pad = pad, stride = stride](Tape<double>& t, Inputs in) {
        return weighted_sum(t, conv2d(t, in[0], in[1], in[2], stride, pad), w);
      },
                         {Var<double>(x), Var<double>(k), Var<double>(b)});
      out.push_back({std::string(name) + "-stride" + std::to_string(stride), r});
    }
  }

  {
    auto x = random_tensor({4, 3, 3, 3}, rng, -2.0, 2.0);
    auto g = random_tensor({3}, rng, 0.5, 1.5);
    auto b = random_tensor({3}, rng);
    auto w = random_tensor({4, 3, 3, 3}, rng);
    auto r = gradcheck([&](Tape<double>& t, Inputs in) {
      BatchNormState<double> s(3);
      return weighted_sum(t, batch_norm(t, in[0], in[1], in[2], s, Mode::train), w);
    },
                       {Var<double>(x), Var<double>(g), Var<double>(b)});
    out.push_back({"batch_norm", r});
  }

  {
    auto x = random_tensor({3, 2, 6, 6}, rng);
    auto k = random_tensor({4, 2, 3, 3}, rng);
    auto g = random_tensor({4}, rng, 0.5, 1.5);
    auto b = random_tensor({4}, rng, -0.3, 0.3);
    auto head = random_tensor({5, 4, 1, 1}, rng);
    const int labels[] = {1, 4, 0};
    auto r = gradcheck([&](Tape<double>& t, Inputs in) {
      BatchNormState<double> s(4);
      auto y = conv2d(t, in[0], in[1], 1, PaddingMode::wrap_rows());
      y = relu(t, batch_norm(t, y, in[2], in[3], s, Mode::train));
      auto logits = global_average_pool(t, conv2d(t, y, in[4], 1, PaddingMode::zeros()));
      return softmax_cross_entropy(t, logits, std::span<const int>(labels));
    },
                       {Var<double>(x), Var<double>(k), Var<double>(g), Var<double>(b), Var<double>(head)});
    out.push_back({"relu-composite", r});
  }

  {
    auto img = random_tensor({2, 2, 6, 7}, rng, 0.0, 1.0);
    auto grid = off_grid({2, 4, 5, 2}, rng, -1.5, 7.5);
    auto w = random_tensor({2, 2, 4, 5}, rng);
    auto r = gradcheck([&](Tape<double>& t, Inputs in) { return weighted_sum(t, bilinear_sample(t, in[0], in[1]), w); },
                       {Var<double>(img), Var<double>(grid)});
    out.push_back({"bilinear_sample", r});
  }

  {
    auto img = random_tensor({2, 1, 12, 12}, rng, 0.0, 1.0);
    auto origin = off_grid({2, 2}, rng, 3.0, 8.0);
    auto w = random_tensor({2, 1, 8, 8}, rng);
    auto r = gradcheck([&](Tape<double>& t, Inputs in) {
      return weighted_sum(t, polar_transform(t, in[0], in[1], 8, 8), w);
    },
                       {Var<double>(img), Var<double>(origin)});
    out.push_back({"polar_transform", r});
  }

  {
    auto raw = random_tensor({2, 1, 5, 6}, rng, -2.0, 2.0);
    auto w = random_tensor({2, 2}, rng);
    auto r = gradcheck([&](Tape<double>& t, Inputs in) {
      return weighted_sum(t, to_input_frame(t, centroid(t, spatial_softmax(t, in[0])), 2), w);
    },
                       {Var<double>(raw)});
    out.push_back({"centroid_softmax", r});
  }
  return out;
}

}  // namespace ptn
