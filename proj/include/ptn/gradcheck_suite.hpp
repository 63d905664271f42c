#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ptn/gradcheck.hpp"

namespace ptn {

struct SuiteEntry {
  std::string op;
  GradcheckResult result;
};

/// Finite-difference checks of every differentiable op used by the networks,
/// in 64-bit at seeded random points.
std::vector<SuiteEntry> gradcheck_suite(std::uint64_t seed);

}  // namespace ptn
