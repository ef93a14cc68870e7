#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dcnt/tensor.hpp"

namespace dcnt::ad {

struct GradCheckOptions {
  double eps = 1e-6;
  /// 0 checks every component; otherwise a seeded sample per input tensor.
  std::size_t max_components = 0;
  std::uint64_t seed = 0;
  /// Components whose one-sided slopes disagree by more than this (relative)
  /// sit on a kink (relu, maxpool tie, argmax flip) and are excluded.
  double kink_tolerance = 1e-4;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t excluded = 0;
  /// Non-empty when an intermediate value was NaN/inf; names the op.
  std::string nonfinite_op;

  bool ok(double tolerance) const { return nonfinite_op.empty() && checked > 0 && max_rel_error < tolerance; }
};

/// Compares reverse-mode gradients of the scalar program f with central
/// differences, per component:
///   |g_ad - g_fd| / max(1, |g_ad|, |g_fd|)
/// f must read the current values of `inputs` (they are perturbed in place).
GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& options = {});

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps = 1e-6);

}  // namespace dcnt::ad
