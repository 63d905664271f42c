#include "ptn/optim.hpp"

#include <cmath>

namespace ptn {

template <typename T>
void adam_step(std::vector<Var<T>>& params, AdamState<T>& state, const AdamConfig& config) {
  if (state.m.empty() && state.v.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.shape());
      state.v.emplace_back(p.shape());
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state has " + std::to_string(state.m.size()) + " slots for " +
                         std::to_string(params.size()) + " parameters");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k].value();
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.shape() != p.shape() || v.shape() != p.shape()) {
      throw DimensionError("adam_step: state shape mismatch for parameter " + std::to_string(k));
    }
    const bool has = params[k].has_grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = has ? static_cast<double>(params[k].grad()[i]) : 0.0;
      const double mi = config.beta1 * m[i] + (1.0 - config.beta1) * g;
      const double vi = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      p[i] -= static_cast<T>(config.lr * (mi / c1) / (std::sqrt(vi / c2) + config.epsilon));
    }
  }
}

template void adam_step(std::vector<Var<float>>&, AdamState<float>&, const AdamConfig&);
template void adam_step(std::vector<Var<double>>&, AdamState<double>&, const AdamConfig&);

}  // namespace ptn
