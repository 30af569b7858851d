#pragma once

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "tirtrack/tirtrack.hpp"

namespace tt {

using namespace tirtrack;

inline Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data_mut()) v = u(rng);
  return t;
}

inline std::size_t rand_size(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return lo + std::size_t(rng() % (hi - lo + 1));
}

inline void expect_near(const Tensor& a, const Tensor& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "at flat index " << i;
}

/// Passes `f` through grad_check with the given parameters as leaves.
template <typename F>
GradCheckReport check_grads(F&& f, std::vector<std::pair<std::string, Tensor>> params,
                            std::uint64_t seed = 0) {
  ParamStore store;
  for (auto& [name, t] : params) store.add(name, t);
  GradCheckOptions opt;
  opt.seed = seed;
  opt.coords_per_param = 1000;
  return grad_check(f, store, opt);
}

}  // namespace tt

namespace tt {
inline std::vector<double> to_vec(std::span<const double> s) { return {s.begin(), s.end()}; }
}  // namespace tt
