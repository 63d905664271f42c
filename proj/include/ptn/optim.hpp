#pragma once

#include <vector>

#include "ptn/autodiff.hpp"

namespace ptn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment estimates, one pair per parameter, plus the step count.
template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  long step = 0;
};

/// One bias-corrected Adam update of every parameter from its accumulated
/// gradient (a parameter without a gradient sees g = 0). State is lazily
/// shaped on the first call; a mismatched state throws DimensionError.
template <typename T>
void adam_step(std::vector<Var<T>>& params, AdamState<T>& state, const AdamConfig& config);

}  // namespace ptn
