#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <vector>

#include "tirtrack/autograd.hpp"
#include "tirtrack/gemm.hpp"
#include "tirtrack/tensor.hpp"

// Differentiable tensor operations. Each op computes its forward value eagerly
// and, when any input requires a gradient, records a hand-written backward.

namespace tirtrack {

namespace detail {

struct AxisSplit {
  std::size_t outer = 1, axis = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    contract_fail("axis ", axis, " out of range for ", shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.axis = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

inline void require_rank(const Var& x, std::size_t rank, const char* op) {
  if (x.shape().size() != rank) {
    contract_fail(op, ": expected rank ", rank, ", got ", shape_str(x.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------- linear algebra

inline Var matmul(const Var& a, const Var& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  if (b.extent(0) != k) {
    contract_fail("matmul: inner extents disagree, ", shape_str(a.shape()),
                  " x ", shape_str(b.shape()));
  }
  Tensor out({m, n});
  gemm::nn(m, n, k, a.value().data().data(), b.value().data().data(),
           out.data_mut().data());
  return make_result(std::move(out), {a, b}, [m, n, k](Node& self) {
    const double* g = self.grad.data();
    if (auto ga = self.parent_grad(0); !ga.empty())
      gemm::nt(m, k, n, g, self.parent_value(1).data().data(), ga.data());
    if (auto gb = self.parent_grad(1); !gb.empty())
      gemm::tn(k, n, m, self.parent_value(0).data().data(), g, gb.data());
  });
}

inline Var transpose(const Var& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t r = a.extent(0), c = a.extent(1);
  Tensor out({c, r});
  gemm::transpose(r, c, a.value().data().data(), out.data_mut().data());
  return make_result(std::move(out), {a}, [r, c](Node& self) {
    auto ga = self.parent_grad(0);
    std::vector<double> tmp(r * c);
    gemm::transpose(c, r, self.grad.data(), tmp.data());
    for (std::size_t i = 0; i < tmp.size(); ++i) ga[i] += tmp[i];
  });
}

/// Shares data with the input; only the shape changes.
inline Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make_result(std::move(out), {a}, [](Node& self) {
    auto ga = self.parent_grad(0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------- elementwise

inline Var add(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    contract_fail("add: shape mismatch ", shape_str(a.shape()), " vs ",
                  shape_str(b.shape()));
  }
  Tensor out = a.value();
  auto od = out.data_mut();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] += bd[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      auto g = self.parent_grad(p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

/// x[m×n] + bias[n] broadcast over rows.
inline Var add_bias(const Var& x, const Var& bias) {
  detail::require_rank(x, 2, "add_bias");
  const std::size_t m = x.extent(0), n = x.extent(1);
  if (bias.numel() != n) {
    contract_fail("add_bias: bias ", shape_str(bias.shape()), " for ",
                  shape_str(x.shape()));
  }
  Tensor out = x.value();
  auto od = out.data_mut();
  auto bd = bias.value().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) od[i * n + j] += bd[j];
  return make_result(std::move(out), {x, bias}, [m, n](Node& self) {
    if (auto gx = self.parent_grad(0); !gx.empty())
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    if (auto gb = self.parent_grad(1); !gb.empty())
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += self.grad[i * n + j];
  });
}

/// Adds a non-differentiable tensor of the same shape (attention masks).
inline Var add_constant(const Var& x, const Tensor& c) {
  if (x.shape() != c.shape()) {
    contract_fail("add_constant: shape mismatch ", shape_str(x.shape()), " vs ",
                  shape_str(c.shape()));
  }
  Tensor out = x.value();
  auto od = out.data_mut();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] += c[i];
  return make_result(std::move(out), {x}, [](Node& self) {
    auto g = self.parent_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

inline Var scale(const Var& x, double factor) {
  Tensor out = x.value();
  for (double& v : out.data_mut()) v *= factor;
  return make_result(std::move(out), {x}, [factor](Node& self) {
    auto g = self.parent_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

inline Var mul(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    contract_fail("mul: shape mismatch ", shape_str(a.shape()), " vs ",
                  shape_str(b.shape()));
  }
  Tensor out = a.value();
  auto od = out.data_mut();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] *= bd[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (auto ga = self.parent_grad(0); !ga.empty()) {
      auto bv = self.parent_value(1).data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * bv[i];
    }
    if (auto gb = self.parent_grad(1); !gb.empty()) {
      auto av = self.parent_value(0).data();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i] * av[i];
    }
  });
}

/// Exact (erf-based) GELU.
inline Var gelu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.data_mut()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  return make_result(std::move(out), {x}, [](Node& self) {
    auto g = self.parent_grad(0);
    auto xv = self.parent_value(0).data();
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

// ---------------------------------------------------------------- reductions

inline Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return make_result(Tensor::scalar(s), {x}, [](Node& self) {
    auto g = self.parent_grad(0);
    for (double& v : g) v += self.grad[0];
  });
}

inline Var mean(const Var& x) { return scale(sum(x), 1.0 / double(x.numel())); }

/// Numerically stable softmax along `axis` (max-subtracted).
inline Var softmax(const Var& x, std::size_t axis) {
  const auto s = detail::split_at(x.shape(), axis);
  Tensor out = x.value();
  auto od = out.data_mut();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      double* base = od.data() + o * s.axis * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < s.axis; ++a) mx = std::max(mx, base[a * s.inner]);
      double z = 0.0;
      for (std::size_t a = 0; a < s.axis; ++a) {
        base[a * s.inner] = std::exp(base[a * s.inner] - mx);
        z += base[a * s.inner];
      }
      for (std::size_t a = 0; a < s.axis; ++a) base[a * s.inner] /= z;
    }
  }
  return make_result(std::move(out), {x}, [s](Node& self) {
    auto g = self.parent_grad(0);
    auto y = self.value.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t off = o * s.axis * s.inner + in;
        double dot = 0.0;
        for (std::size_t a = 0; a < s.axis; ++a) {
          const std::size_t i = off + a * s.inner;
          dot += self.grad[i] * y[i];
        }
        for (std::size_t a = 0; a < s.axis; ++a) {
          const std::size_t i = off + a * s.inner;
          g[i] += y[i] * (self.grad[i] - dot);
        }
      }
    }
  });
}

inline Var log_softmax(const Var& x, std::size_t axis) {
  const auto s = detail::split_at(x.shape(), axis);
  Tensor out = x.value();
  auto od = out.data_mut();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      double* base = od.data() + o * s.axis * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < s.axis; ++a) mx = std::max(mx, base[a * s.inner]);
      double z = 0.0;
      for (std::size_t a = 0; a < s.axis; ++a) z += std::exp(base[a * s.inner] - mx);
      const double lz = mx + std::log(z);
      for (std::size_t a = 0; a < s.axis; ++a) base[a * s.inner] -= lz;
    }
  }
  return make_result(std::move(out), {x}, [s](Node& self) {
    auto g = self.parent_grad(0);
    auto y = self.value.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t off = o * s.axis * s.inner + in;
        double gs = 0.0;
        for (std::size_t a = 0; a < s.axis; ++a) gs += self.grad[off + a * s.inner];
        for (std::size_t a = 0; a < s.axis; ++a) {
          const std::size_t i = off + a * s.inner;
          g[i] += self.grad[i] - std::exp(y[i]) * gs;
        }
      }
    }
  });
}

/// LayerNorm over the last axis of x[m×n] with affine gain/bias of length n.
inline Var layer_norm(const Var& x, const Var& gain, const Var& bias,
                      double eps = 1e-5) {
  detail::require_rank(x, 2, "layer_norm");
  const std::size_t m = x.extent(0), n = x.extent(1);
  if (gain.numel() != n || bias.numel() != n) {
    contract_fail("layer_norm: affine params must have ", n, " entries");
  }
  std::vector<double> xhat(m * n), inv_std(m);
  Tensor out({m, n});
  auto xv = x.value().data();
  auto gv = gain.value().data();
  auto bv = bias.value().data();
  auto od = out.data_mut();
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xv[i * n + j];
    mu /= double(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = xv[i * n + j] - mu;
      var += d * d;
    }
    var /= double(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (xv[i * n + j] - mu) * inv_std[i];
      xhat[i * n + j] = h;
      od[i * n + j] = h * gv[j] + bv[j];
    }
  }
  return make_result(
      std::move(out), {x, gain, bias},
      [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const double* dy = self.grad.data();
        if (auto gg = self.parent_grad(1); !gg.empty())
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gg[j] += dy[i * n + j] * xhat[i * n + j];
        if (auto gb = self.parent_grad(2); !gb.empty())
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += dy[i * n + j];
        if (auto gx = self.parent_grad(0); !gx.empty()) {
          auto gv = self.parent_value(1).data();
          std::vector<double> dh(n);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              dh[j] = dy[i * n + j] * gv[j];
              mean_dh += dh[j];
              mean_dh_h += dh[j] * xhat[i * n + j];
            }
            mean_dh /= double(n);
            mean_dh_h /= double(n);
            for (std::size_t j = 0; j < n; ++j)
              gx[i * n + j] +=
                  inv_std[i] * (dh[j] - mean_dh - xhat[i * n + j] * mean_dh_h);
          }
        }
      });
}

// ---------------------------------------------------------------- structural

inline Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) contract_fail("concat: no inputs");
  Shape out_shape = parts[0].shape();
  const auto s0 = detail::split_at(out_shape, axis);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    const auto s = detail::split_at(p.shape(), axis);
    Shape a = p.shape(), b = out_shape;
    a[axis] = b[axis] = 0;
    if (a != b || s.outer != s0.outer || s.inner != s0.inner) {
      contract_fail("concat: incompatible shapes ", shape_str(parts[0].shape()),
                    " and ", shape_str(p.shape()), " on axis ", axis);
    }
    widths.push_back(s.axis * s.inner);
    total += s.axis;
  }
  out_shape[axis] = total;
  Tensor out(out_shape);
  auto od = out.data_mut();
  const std::size_t row = total * s0.inner;
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto src = parts[p].value().data();
    for (std::size_t o = 0; o < s0.outer; ++o)
      std::copy_n(src.data() + o * widths[p], widths[p], od.data() + o * row + offset);
    offset += widths[p];
  }
  return make_result(std::move(out), parts, [widths, row, outer = s0.outer](Node& self) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
      if (auto g = self.parent_grad(p); !g.empty())
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < widths[p]; ++i)
            g[o * widths[p] + i] += self.grad[o * row + offset + i];
      offset += widths[p];
    }
  });
}

/// Half-open range [begin, end) along `axis`.
inline Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto s = detail::split_at(x.shape(), axis);
  if (begin >= end || end > s.axis) {
    contract_fail("slice: range [", begin, ",", end, ") invalid for ",
                  shape_str(x.shape()), " axis ", axis);
  }
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  Tensor out(out_shape);
  const std::size_t src_row = s.axis * s.inner;
  const std::size_t dst_row = (end - begin) * s.inner;
  auto xd = x.value().data();
  auto od = out.data_mut();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(xd.data() + o * src_row + begin * s.inner, dst_row,
                od.data() + o * dst_row);
  return make_result(std::move(out), {x}, [s, begin, src_row, dst_row](Node& self) {
    auto g = self.parent_grad(0);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < dst_row; ++i)
        g[o * src_row + begin * s.inner + i] += self.grad[o * dst_row + i];
  });
}

/// Rows of table[V×D] selected by ids, giving [T×D].
inline Var embedding(const Var& table, const std::vector<std::size_t>& ids) {
  detail::require_rank(table, 2, "embedding");
  const std::size_t v = table.extent(0), d = table.extent(1);
  if (ids.empty()) contract_fail("embedding: empty id list");
  Tensor out({ids.size(), d});
  auto td = table.value().data();
  auto od = out.data_mut();
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] >= v) contract_fail("embedding: id ", ids[t], " >= table size ", v);
    std::copy_n(td.data() + ids[t] * d, d, od.data() + t * d);
  }
  return make_result(std::move(out), {table}, [ids, d](Node& self) {
    auto g = self.parent_grad(0);
    for (std::size_t t = 0; t < ids.size(); ++t)
      for (std::size_t j = 0; j < d; ++j) g[ids[t] * d + j] += self.grad[t * d + j];
  });
}

/// Picks x[t, idx[t]] for each row, giving [T].
inline Var gather_cols(const Var& x, const std::vector<std::size_t>& idx) {
  detail::require_rank(x, 2, "gather_cols");
  const std::size_t t_rows = x.extent(0), v = x.extent(1);
  if (idx.size() != t_rows) {
    contract_fail("gather_cols: ", idx.size(), " indices for ", t_rows, " rows");
  }
  Tensor out({t_rows});
  for (std::size_t t = 0; t < t_rows; ++t) {
    if (idx[t] >= v) contract_fail("gather_cols: index ", idx[t], " >= ", v);
    out[t] = x.value()[t * v + idx[t]];
  }
  return make_result(std::move(out), {x}, [idx, v](Node& self) {
    auto g = self.parent_grad(0);
    for (std::size_t t = 0; t < idx.size(); ++t) g[t * v + idx[t]] += self.grad[t];
  });
}

// ---------------------------------------------------------------- convolution

/// Cross-correlation of x[Ci×H×W] with w[Co×Ci×k×k]; `bias` may be undefined.
inline Var conv2d(const Var& x, const Var& w, const Var& bias, std::size_t stride,
                  std::size_t pad) {
  detail::require_rank(x, 3, "conv2d");
  detail::require_rank(w, 4, "conv2d");
  const std::size_t ci = x.extent(0), h = x.extent(1), wd = x.extent(2);
  const std::size_t co = w.extent(0), k = w.extent(2);
  if (w.extent(1) != ci || w.extent(3) != k) {
    contract_fail("conv2d: weight ", shape_str(w.shape()), " incompatible with input ",
                  shape_str(x.shape()));
  }
  if (stride == 0 || k == 0) contract_fail("conv2d: stride and kernel must be >= 1");
  if (h + 2 * pad < k || wd + 2 * pad < k || (h + 2 * pad - k) % stride != 0 ||
      (wd + 2 * pad - k) % stride != 0) {
    contract_fail("conv2d: non-integral output extent for input ", shape_str(x.shape()),
                  " kernel ", k, " stride ", stride, " pad ", pad);
  }
  if (bias.defined() && bias.numel() != co) contract_fail("conv2d: bias size mismatch");
  const std::size_t ho = (h + 2 * pad - k) / stride + 1;
  const std::size_t wo = (wd + 2 * pad - k) / stride + 1;
  const std::size_t ckk = ci * k * k, hw = ho * wo;
  const bool pointwise = (k == 1 && stride == 1 && pad == 0);

  std::vector<double> cols;
  if (!pointwise) {
    cols.assign(ckk * hw, 0.0);
    auto xd = x.value().data();
    for (std::size_t c = 0; c < ci; ++c)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          double* row = cols.data() + ((c * k + ky) * k + kx) * hw;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const std::ptrdiff_t iy = std::ptrdiff_t(oy * stride + ky) - std::ptrdiff_t(pad);
            if (iy < 0 || iy >= std::ptrdiff_t(h)) continue;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const std::ptrdiff_t ix = std::ptrdiff_t(ox * stride + kx) - std::ptrdiff_t(pad);
              if (ix < 0 || ix >= std::ptrdiff_t(wd)) continue;
              row[oy * wo + ox] = xd[(c * h + std::size_t(iy)) * wd + std::size_t(ix)];
            }
          }
        }
  }
  const double* colp = pointwise ? x.value().data().data() : cols.data();

  Tensor out({co, ho, wo});
  auto od = out.data_mut();
  if (bias.defined()) {
    auto bd = bias.value().data();
    for (std::size_t o = 0; o < co; ++o) std::fill_n(od.data() + o * hw, hw, bd[o]);
  }
  gemm::nn(co, hw, ckk, w.value().data().data(), colp, od.data());

  std::vector<Var> parents{x, w};
  if (bias.defined()) parents.push_back(bias);
  if (!grad_mode_enabled()) cols.clear();
  return make_result(
      std::move(out), std::move(parents),
      [=, cols = std::move(cols)](Node& self) {
        const double* dy = self.grad.data();
        const double* colp2 = pointwise ? self.parent_value(0).data().data() : cols.data();
        if (auto gw = self.parent_grad(1); !gw.empty())
          gemm::nt(co, ckk, hw, dy, colp2, gw.data());
        if (self.parents.size() > 2)
          if (auto gb = self.parent_grad(2); !gb.empty())
            for (std::size_t o = 0; o < co; ++o)
              for (std::size_t i = 0; i < hw; ++i) gb[o] += dy[o * hw + i];
        if (auto gx = self.parent_grad(0); !gx.empty()) {
          if (pointwise) {
            gemm::tn(ckk, hw, co, self.parent_value(1).data().data(), dy, gx.data());
            return;
          }
          std::vector<double> dcols(ckk * hw, 0.0);
          gemm::tn(ckk, hw, co, self.parent_value(1).data().data(), dy, dcols.data());
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const double* row = dcols.data() + ((c * k + ky) * k + kx) * hw;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                  const std::ptrdiff_t iy = std::ptrdiff_t(oy * stride + ky) - std::ptrdiff_t(pad);
                  if (iy < 0 || iy >= std::ptrdiff_t(h)) continue;
                  for (std::size_t ox = 0; ox < wo; ++ox) {
                    const std::ptrdiff_t ix = std::ptrdiff_t(ox * stride + kx) - std::ptrdiff_t(pad);
                    if (ix < 0 || ix >= std::ptrdiff_t(wd)) continue;
                    gx[(c * h + std::size_t(iy)) * wd + std::size_t(ix)] += row[oy * wo + ox];
                  }
                }
              }
        }
      });
}

/// Transposed convolution of x[Ci×H×W] with w[Ci×Co×k×k], no padding.
/// Output extent (H−1)·stride + k.
inline Var conv_transpose2d(const Var& x, const Var& w, const Var& bias,
                            std::size_t stride) {
  detail::require_rank(x, 3, "conv_transpose2d");
  detail::require_rank(w, 4, "conv_transpose2d");
  const std::size_t ci = x.extent(0), h = x.extent(1), wd = x.extent(2);
  const std::size_t co = w.extent(1), k = w.extent(2);
  if (w.extent(0) != ci || w.extent(3) != k) {
    contract_fail("conv_transpose2d: weight ", shape_str(w.shape()),
                  " incompatible with input ", shape_str(x.shape()));
  }
  if (stride == 0) contract_fail("conv_transpose2d: stride must be >= 1");
  if (bias.defined() && bias.numel() != co) {
    contract_fail("conv_transpose2d: bias size mismatch");
  }
  const std::size_t ho = (h - 1) * stride + k, wo = (wd - 1) * stride + k;
  const std::size_t hw = h * wd, okk = co * k * k;

  std::vector<double> cols(okk * hw, 0.0);
  gemm::tn(okk, hw, ci, w.value().data().data(), x.value().data().data(), cols.data());
  Tensor out({co, ho, wo});
  auto od = out.data_mut();
  for (std::size_t o = 0; o < co; ++o) {
    const double b = bias.defined() ? bias.value()[o] : 0.0;
    std::fill_n(od.data() + o * ho * wo, ho * wo, b);
  }
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = cols.data() + ((o * k + ky) * k + kx) * hw;
        for (std::size_t iy = 0; iy < h; ++iy)
          for (std::size_t ix = 0; ix < wd; ++ix)
            od[(o * ho + iy * stride + ky) * wo + ix * stride + kx] += row[iy * wd + ix];
      }

  std::vector<Var> parents{x, w};
  if (bias.defined()) parents.push_back(bias);
  return make_result(std::move(out), std::move(parents), [=](Node& self) {
    const double* dy = self.grad.data();
    std::vector<double> dcols(okk * hw);
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          double* row = dcols.data() + ((o * k + ky) * k + kx) * hw;
          for (std::size_t iy = 0; iy < h; ++iy)
            for (std::size_t ix = 0; ix < wd; ++ix)
              row[iy * wd + ix] = dy[(o * ho + iy * stride + ky) * wo + ix * stride + kx];
        }
    if (auto gx = self.parent_grad(0); !gx.empty())
      gemm::nn(ci, hw, okk, self.parent_value(1).data().data(), dcols.data(), gx.data());
    if (auto gw = self.parent_grad(1); !gw.empty())
      gemm::nt(ci, okk, hw, self.parent_value(0).data().data(), dcols.data(), gw.data());
    if (self.parents.size() > 2)
      if (auto gb = self.parent_grad(2); !gb.empty())
        for (std::size_t o = 0; o < co; ++o)
          for (std::size_t i = 0; i < ho * wo; ++i) gb[o] += dy[o * ho * wo + i];
  });
}

/// 2×2 max pooling with stride 2; ties resolve to the first element in
/// row-major window order.
inline Var max_pool2x2(const Var& x) {
  detail::require_rank(x, 3, "max_pool2x2");
  const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  if (h % 2 != 0 || w % 2 != 0) {
    contract_fail("max_pool2x2: odd extent in ", shape_str(x.shape()));
  }
  const std::size_t ho = h / 2, wo = w / 2;
  Tensor out({c, ho, wo});
  std::vector<std::size_t> arg(c * ho * wo);
  auto xd = x.value().data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = (ch * h + 2 * oy) * w + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t i = (ch * h + 2 * oy + dy) * w + 2 * ox + dx;
            if (xd[i] > xd[best]) best = i;
          }
        const std::size_t o = (ch * ho + oy) * wo + ox;
        arg[o] = best;
        out[o] = xd[best];
      }
  return make_result(std::move(out), {x}, [arg = std::move(arg)](Node& self) {
    auto g = self.parent_grad(0);
    for (std::size_t o = 0; o < arg.size(); ++o) g[arg[o]] += self.grad[o];
  });
}

namespace detail {
struct BilinearTap {
  std::size_t lo, hi;
  double frac;
};

// Half-pixel-centre mapping for ×2 upsampling, edge-clamped.
inline std::vector<BilinearTap> upsample_taps(std::size_t in) {
  std::vector<BilinearTap> taps(2 * in);
  for (std::size_t o = 0; o < 2 * in; ++o) {
    double src = (double(o) + 0.5) / 2.0 - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t lo = std::size_t(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const std::size_t hi = std::min(lo + 1, in - 1);
    taps[o] = {lo, hi, src - double(lo)};
  }
  return taps;
}
}  // namespace detail

/// ×2 bilinear upsampling of x[C×H×W] (half-pixel centres, no corner alignment).
inline Var upsample_bilinear2x(const Var& x) {
  detail::require_rank(x, 3, "upsample_bilinear2x");
  const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  const auto ty = detail::upsample_taps(h), tx = detail::upsample_taps(w);
  const std::size_t ho = 2 * h, wo = 2 * w;
  Tensor out({c, ho, wo});
  auto xd = x.value().data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = xd.data() + ch * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      const auto& a = ty[oy];
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const auto& b = tx[ox];
        const double top = src[a.lo * w + b.lo] * (1 - b.frac) + src[a.lo * w + b.hi] * b.frac;
        const double bot = src[a.hi * w + b.lo] * (1 - b.frac) + src[a.hi * w + b.hi] * b.frac;
        out[(ch * ho + oy) * wo + ox] = top * (1 - a.frac) + bot * a.frac;
      }
    }
  }
  return make_result(std::move(out), {x}, [=](Node& self) {
    auto g = self.parent_grad(0);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* dst = g.data() + ch * h * w;
      for (std::size_t oy = 0; oy < ho; ++oy) {
        const auto& a = ty[oy];
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const auto& b = tx[ox];
          const double gv = self.grad[(ch * ho + oy) * wo + ox];
          dst[a.lo * w + b.lo] += gv * (1 - a.frac) * (1 - b.frac);
          dst[a.lo * w + b.hi] += gv * (1 - a.frac) * b.frac;
          dst[a.hi * w + b.lo] += gv * a.frac * (1 - b.frac);
          dst[a.hi * w + b.hi] += gv * a.frac * b.frac;
        }
      }
    }
  });
}

// ---------------------------------------------------------------- composites

/// x[m×in] · w[in×out] + b[out]
inline Var linear(const Var& x, const Var& w, const Var& b) {
  return add_bias(matmul(x, w), b);
}

}  // namespace tirtrack
