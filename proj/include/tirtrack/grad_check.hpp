#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "tirtrack/autograd.hpp"
#include "tirtrack/param_store.hpp"

namespace tirtrack {

struct GradCheckOptions {
  double eps = 1e-4;
  double tol = 1e-4;
  /// Coordinates probed per trainable parameter (all of them if smaller).
  std::size_t coords_per_param = 6;
  std::uint64_t seed = 0;
  /// Relative errors use max(|analytic|, |numeric|, floor) as denominator so
  /// that vanishing gradients are judged on absolute error instead.
  double denom_floor = 1e-6;
};

struct GradCheckReport {
  bool passed = true;
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
  /// "name[index]" of a probe whose function value was not finite.
  std::optional<std::string> nonfinite_coord;
};

/// Compares reverse-mode gradients of the scalar `f(store)` against central
/// differences (f(θ+ε) − f(θ−ε)) / 2ε on a random subset of coordinates.
template <typename F>
GradCheckReport grad_check(F&& f, ParamStore& store, const GradCheckOptions& opt = {}) {
  if (!(opt.eps >= 1e-6 && opt.eps <= 1e-3)) {
    contract_fail("grad_check: eps ", opt.eps, " outside [1e-6, 1e-3]");
  }
  GradCheckReport report;
  store.zero_grad();
  {
    Var y = f(store);
    if (!std::isfinite(y.item())) {
      report.passed = false;
      report.nonfinite_coord = "<base point>";
      return report;
    }
    backward(y);
  }

  std::mt19937_64 rng(opt.seed);
  NoGradGuard no_grad;
  for (const std::string& name : store.names()) {
    if (!store.trainable(name)) continue;
    const std::vector<double> analytic = store.grad(name);
    std::vector<std::size_t> idx(analytic.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(idx.size(), opt.coords_per_param));
    std::sort(idx.begin(), idx.end());

    for (std::size_t i : idx) {
      auto values = store.values_mut(name);
      const double orig = values[i];
      values[i] = orig + opt.eps;
      const double fp = f(store).item();
      store.values_mut(name)[i] = orig - opt.eps;
      const double fm = f(store).item();
      store.values_mut(name)[i] = orig;
      ++report.coords_checked;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        report.passed = false;
        if (!report.nonfinite_coord)
          report.nonfinite_coord = name + "[" + std::to_string(i) + "]";
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * opt.eps);
      const double denom =
          std::max({std::abs(analytic[i]), std::abs(numeric), opt.denom_floor});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      if (rel > report.max_rel_error || report.worst_param.empty()) {
        report.max_rel_error = rel;
        report.worst_param = name;
        report.worst_index = i;
        report.worst_analytic = analytic[i];
        report.worst_numeric = numeric;
      }
    }
  }
  store.zero_grad();
  report.passed = report.passed && report.max_rel_error < opt.tol;
  return report;
}

}  // namespace tirtrack
