#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "tirtrack/coord_vocab.hpp"
#include "tirtrack/dual.hpp"
#include "tirtrack/ops.hpp"

// Training objective: sequence cross-entropy plus SIoU on the soft-argmax box.

namespace tirtrack {

namespace siou_detail {

template <typename T>
struct Box {
  T x, y, w, h;
};

template <typename T> T vmax(const T& a, const T& b) { return a < b ? b : a; }
template <typename T> T vmin(const T& a, const T& b) { return b < a ? b : a; }

template <typename T>
T iou(const Box<T>& a, const Box<T>& b) {
  using std::abs;
  const T ix = vmax<T>(T(0.0), vmin(a.x + a.w, b.x + b.w) - vmax(a.x, b.x));
  const T iy = vmax<T>(T(0.0), vmin(a.y + a.h, b.y + b.h) - vmax(a.y, b.y));
  const T inter = ix * iy;
  // Areas from the same rounded edges as the overlap, so identical boxes give exactly 1.
  const T area_a = ((a.x + a.w) - a.x) * ((a.y + a.h) - a.y);
  const T area_b = ((b.x + b.w) - b.x) * ((b.y + b.h) - b.y);
  return inter / (area_a + area_b - inter);
}

inline constexpr double kShapeExponent = 4.0;

/// 1 − IoU + (distance + shape)/2 with the angle cost folded into the distance
/// weight γ = 2 − Λ. Λ = 1 − 2 sin²(arcsin(c_h/σ) − π/4) is evaluated through
/// the equivalent closed form 2·c_h·c_w/σ², which avoids the arcsin pole.
template <typename T>
T siou(const Box<T>& p, const Box<T>& g) {
  using std::abs;
  using std::exp;
  using std::sqrt;
  const T dx = (g.x + 0.5 * g.w) - (p.x + 0.5 * p.w);
  const T dy = (g.y + 0.5 * g.h) - (p.y + 0.5 * p.h);
  const T sigma2 = dx * dx + dy * dy;

  T distance(0.0);
  if (value_of(sigma2) > 0.0) {
    const T lambda = 2.0 * abs(dx) * abs(dy) / sigma2;
    const T gamma = 2.0 - lambda;
    const T cw = vmax(p.x + p.w, g.x + g.w) - vmin(p.x, g.x);
    const T ch = vmax(p.y + p.h, g.y + g.h) - vmin(p.y, g.y);
    const T rho_x = (dx / cw) * (dx / cw);
    const T rho_y = (dy / ch) * (dy / ch);
    distance = (1.0 - exp(-gamma * rho_x)) + (1.0 - exp(-gamma * rho_y));
  }

  const T omega_w = abs(p.w - g.w) / vmax(p.w, g.w);
  const T omega_h = abs(p.h - g.h) / vmax(p.h, g.h);
  const T sw = 1.0 - exp(-omega_w), sh = 1.0 - exp(-omega_h);
  const T shape = (sw * sw) * (sw * sw) + (sh * sh) * (sh * sh);
  static_assert(kShapeExponent == 4.0);

  return 1.0 - iou(p, g) + 0.5 * (distance + shape);
}

}  // namespace siou_detail

inline double iou(const BBox& a, const BBox& b) {
  using B = siou_detail::Box<double>;
  return siou_detail::iou(B{a.x, a.y, a.w, a.h}, B{b.x, b.y, b.w, b.h});
}

inline double siou_loss(const BBox& pred, const BBox& gt) {
  if (!pred.valid() || !gt.valid()) contract_fail("siou_loss: boxes need positive extents");
  using B = siou_detail::Box<double>;
  return siou_detail::siou(B{pred.x, pred.y, pred.w, pred.h}, B{gt.x, gt.y, gt.w, gt.h});
}

/// Differentiable SIoU of a predicted [x, y, w, h] against a fixed box.
inline Var siou_loss(const Var& pred, const BBox& gt) {
  if (pred.numel() != 4) contract_fail("siou_loss: prediction must hold 4 values");
  using D = Dual<4>;
  const auto pv = pred.value().data();
  siou_detail::Box<D> p{D::variable(pv[0], 0), D::variable(pv[1], 1), D::variable(pv[2], 2),
                        D::variable(pv[3], 3)};
  if (!(pv[2] > 0 && pv[3] > 0) || !gt.valid()) {
    contract_fail("siou_loss: boxes need positive extents");
  }
  siou_detail::Box<D> g{D(gt.x), D(gt.y), D(gt.w), D(gt.h)};
  const D loss = siou_detail::siou(p, g);
  return make_result(Tensor::scalar(loss.v), {pred}, [d = loss.d](Node& self) {
    auto gp = self.parent_grad(0);
    for (std::size_t i = 0; i < 4; ++i) gp[i] += self.grad[0] * d[i];
  });
}

/// Mean over positions of −log softmax(logits)[target].
inline Var ce_loss(const Var& logits, const std::vector<Token>& targets, const CoordVocab& vocab) {
  if (logits.shape().size() != 2 || logits.extent(0) != targets.size() ||
      logits.extent(1) != vocab.head_rows()) {
    contract_fail("ce_loss: logits ", shape_str(logits.shape()), " for ", targets.size(),
                  " targets and ", vocab.head_rows(), " head rows");
  }
  std::vector<std::size_t> rows;
  for (Token t : targets) rows.push_back(vocab.head_row(t));
  return scale(mean(gather_cols(log_softmax(logits, 1), rows)), -1.0);
}

/// Expected bin centre per coordinate under the softmax over bin rows
/// (the end row is excluded). logits [4×(nbins+1)] → [4].
inline Var soft_box(const Var& logits, const CoordVocab& vocab) {
  if (logits.shape().size() != 2 || logits.extent(0) != 4 ||
      logits.extent(1) != vocab.head_rows()) {
    contract_fail("soft_box: expected [4x", vocab.head_rows(), "] logits, got ",
                  shape_str(logits.shape()));
  }
  static thread_local std::size_t cached_nbins = 0;
  static thread_local Var centers;
  if (cached_nbins != vocab.nbins()) {
    centers = Var::constant(Tensor({vocab.nbins(), 1}, vocab.bin_centers()));
    cached_nbins = vocab.nbins();
  }
  Var probs = softmax(slice(logits, 1, 0, vocab.nbins()), 1);
  return reshape(matmul(probs, centers), {4});
}

struct LossReport {
  Var total;  // differentiable ce + siou
  double ce = 0.0;
  double siou = 0.0;
  std::vector<double> token_log_probs;
};

/// Cross-entropy over all five target positions plus SIoU of the soft box
/// built from the four coordinate positions.
inline LossReport total_loss(const Var& logits, const std::array<Token, 5>& targets,
                             const BBox& gt, const CoordVocab& vocab) {
  Var lp = log_softmax(logits, 1);
  std::vector<std::size_t> rows;
  for (Token t : targets) rows.push_back(vocab.head_row(t));
  Var picked = gather_cols(lp, rows);
  Var ce = scale(mean(picked), -1.0);
  Var box = soft_box(slice(logits, 0, 0, 4), vocab);
  Var si = siou_loss(box, gt);
  LossReport r;
  r.total = add(ce, si);
  r.ce = ce.item();
  r.siou = si.item();
  r.token_log_probs = picked.value().vec();
  return r;
}

}  // namespace tirtrack
