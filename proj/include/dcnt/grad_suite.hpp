#pragma once

// Finite-difference checks over every differentiable block, grouped the way
// the `gradcheck` subcommand reports them.

#include <cstdint>
#include <string>
#include <vector>

#include "dcnt/gradcheck.hpp"

namespace dcnt::ad {

struct BlockCheck {
  std::string block;
  GradCheckReport report;
};

inline constexpr double kGradTolerance = 1e-4;

std::vector<BlockCheck> run_grad_suite(std::uint64_t seed, double eps = 1e-6);

}  // namespace dcnt::ad
