#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tirtrack/ops.hpp"
#include "tirtrack/param_store.hpp"

namespace tirtrack {

/// Additive-mask sentinel. Finite so that no op emits infinities, yet large
/// enough that exp() of a masked score underflows to exactly zero.
inline constexpr double kMaskedScore = -1e30;

/// Scaled dot-product attention split over `heads`. `mask`, when given, is an
/// additive [Nq×Nk] tensor (0 = visible, kMaskedScore = hidden).
inline Var multi_head_attention(const Var& q, const Var& k, const Var& v,
                                std::size_t heads, const Tensor* mask = nullptr) {
  const std::size_t width = q.extent(1);
  if (k.extent(1) != width || v.extent(1) != width || k.extent(0) != v.extent(0)) {
    contract_fail("attention: width mismatch q", shape_str(q.shape()), " k",
                  shape_str(k.shape()), " v", shape_str(v.shape()));
  }
  if (heads == 0 || width % heads != 0) {
    contract_fail("attention: width ", width, " not divisible by ", heads, " heads");
  }
  const std::size_t dh = width / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(double(dh));
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = heads == 1 ? q : slice(q, 1, h * dh, (h + 1) * dh);
    Var kh = heads == 1 ? k : slice(k, 1, h * dh, (h + 1) * dh);
    Var vh = heads == 1 ? v : slice(v, 1, h * dh, (h + 1) * dh);
    Var scores = scale(matmul(qh, transpose(kh)), inv_sqrt_d);
    if (mask) scores = add_constant(scores, *mask);
    outs.push_back(matmul(softmax(scores, 1), vh));
  }
  return heads == 1 ? outs[0] : concat(outs, 1);
}

/// Linear layer parameters "<prefix>.w" [in×out] and "<prefix>.b" [out].
inline void add_linear_params(ParamStore& store, const std::string& prefix, std::size_t in,
                              std::size_t out, Initializer& init, double stddev = 0.02) {
  store.add(prefix + ".w", init.trunc_normal({in, out}, stddev));
  store.add(prefix + ".b", Tensor::zeros({out}));
}

inline Var apply_linear(const ParamStore& store, const std::string& prefix, const Var& x) {
  return linear(x, store.get(prefix + ".w"), store.get(prefix + ".b"));
}

inline void add_norm_params(ParamStore& store, const std::string& prefix, std::size_t dim) {
  store.add(prefix + ".g", Tensor::full({dim}, 1.0));
  store.add(prefix + ".b", Tensor::zeros({dim}));
}

inline Var apply_norm(const ParamStore& store, const std::string& prefix, const Var& x) {
  return layer_norm(x, store.get(prefix + ".g"), store.get(prefix + ".b"));
}

}  // namespace tirtrack
