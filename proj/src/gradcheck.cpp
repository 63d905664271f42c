#include "ptn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace ptn {

namespace {

double evaluate(const LossClosure& loss, std::span<const Var<double>> inputs) {
  Tape<double> tape;
  tape.set_recording(false);
  return loss(tape, inputs).value()[0];
}

}  // namespace

GradcheckResult gradcheck(const LossClosure& loss, std::vector<Var<double>> inputs, const GradcheckOptions& options) {
  std::mt19937_64 rng(options.seed);
  if (options.jitter > 0) {
    std::uniform_real_distribution<double> u(-options.jitter, options.jitter);
    for (auto& in : inputs)
      for (auto& x : in.value().data()) x += u(rng);
  }
  for (auto& in : inputs) {
    in.zero_grad();
    in.set_requires_grad(true);
  }
  {
    Tape<double> tape;
    auto out = loss(tape, inputs);
    backward(out, tape);
  }

  GradcheckResult result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& values = inputs[k].value();
    std::vector<std::size_t> idx(values.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (options.max_entries > 0 && options.max_entries < idx.size()) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(options.max_entries);
      std::sort(idx.begin(), idx.end());
    }
    const bool has = inputs[k].has_grad();
    for (auto i : idx) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const double plus = evaluate(loss, inputs);
      values[i] = saved - options.step;
      const double minus = evaluate(loss, inputs);
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double analytic = has ? inputs[k].grad()[i] : 0.0;
      const double denom = std::max({std::abs(analytic), std::abs(numeric), options.floor});
      const double err = std::abs(analytic - numeric) / denom;
      ++result.compared;
      if (result.compared == 1 || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_input = k;
        result.worst_index = i;
        result.analytic = analytic;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace ptn
