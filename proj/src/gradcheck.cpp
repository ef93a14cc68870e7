#include "dcnt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dcnt/errors.hpp"

namespace dcnt::ad {

GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& options) {
  if (options.eps < 1e-6 || options.eps > 1e-3) throw ContractError("grad_check: eps must lie in [1e-6, 1e-3]");
  GradCheckReport report;
  for (auto& x : inputs) {
    if (!x.requires_grad()) throw ContractError("grad_check: input does not require grad");
    x.zero_grad();
  }
  const Tensor loss = f();
  report.nonfinite_op = find_nonfinite(loss);
  if (!report.nonfinite_op.empty()) return report;
  backward(loss);
  const double f0 = loss.item();

  std::mt19937_64 rng(options.seed);
  for (auto& x : inputs) {
    // Inputs the loss never reaches have no gradient buffer; their true
    // gradient is zero.
    std::vector<double> analytic(x.numel(), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
    std::vector<std::size_t> comps(x.numel());
    std::iota(comps.begin(), comps.end(), 0);
    if (options.max_components > 0 && comps.size() > options.max_components) {
      std::shuffle(comps.begin(), comps.end(), rng);
      comps.resize(options.max_components);
      std::sort(comps.begin(), comps.end());
    }
    auto values = x.mutable_values();
    for (auto i : comps) {
      const double saved = values[i];
      double fp, fm;
      {
        NoGradGuard guard;
        values[i] = saved + options.eps;
        const Tensor tp = f();
        values[i] = saved - options.eps;
        const Tensor tm = f();
        values[i] = saved;
        fp = tp.item();
        fm = tm.item();
      }
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        // Re-run with the tape on so the offending op can be named.
        values[i] = saved + (std::isfinite(fp) ? -options.eps : options.eps);
        report.nonfinite_op = find_nonfinite(f());
        values[i] = saved;
        if (report.nonfinite_op.empty()) report.nonfinite_op = "output";
        return report;
      }
      const double right = (fp - f0) / options.eps;
      const double left = (f0 - fm) / options.eps;
      const double g_ad = analytic[i];
      if (std::abs(right - left) > options.kink_tolerance * std::max({1.0, std::abs(right), std::abs(left)})) {
        ++report.excluded;
        continue;
      }
      const double g_fd = (fp - fm) / (2.0 * options.eps);
      const double err = std::abs(g_ad - g_fd) / std::max({1.0, std::abs(g_ad), std::abs(g_fd)});
      report.max_rel_error = std::max(report.max_rel_error, err);
      ++report.checked;
    }
  }
  return report;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps) {
  GradCheckOptions options;
  options.eps = eps;
  return grad_check([&] { return f(x); }, {x}, options);
}

}  // namespace dcnt::ad
