#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ptn/autodiff.hpp"

namespace ptn {

/// Builds a scalar loss from the given inputs on a fresh tape.
using LossClosure = std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>;

struct GradcheckOptions {
  double step = 1e-5;
  /// Entries compared per input; 0 compares all of them, otherwise a seeded random subset.
  std::size_t max_entries = 0;
  /// Uniform jitter of this half-width applied to every input before checking.
  double jitter = 0.0;
  /// Gradients smaller than this are compared in absolute terms.
  double floor = 1e-6;
  std::uint64_t seed = 0;
};

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t compared = 0;
};

/// Compares tape gradients of `loss` against central finite differences.
/// Error per entry is |a - n| / max(|a|, |n|, floor); the maximum is returned.
/// Callers pick points away from relu kinks and integer sampling coordinates.
GradcheckResult gradcheck(const LossClosure& loss, std::vector<Var<double>> inputs,
                          const GradcheckOptions& options = {});

}  // namespace ptn
