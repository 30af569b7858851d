#pragma once

#include <cmath>
#include <vector>

#include "tirtrack/coord_vocab.hpp"
#include "tirtrack/objective.hpp"

// OTB-style one-pass evaluation: success AUC, precision at 20 px and
// normalized precision at 0.2.

namespace tirtrack {

inline constexpr std::size_t kSuccessThresholds = 21;  // 0, 0.05, ..., 1.0
inline constexpr double kPrecisionPixels = 20.0;
inline constexpr double kNormPrecision = 0.2;

struct MetricReport {
  double suc = 0.0;
  double pre = 0.0;
  double normp = 0.0;
  std::vector<double> ious;
  std::vector<double> center_errors;
  std::vector<double> norm_center_errors;
};

inline double center_error(const BBox& p, const BBox& g) {
  return std::hypot(p.cx() - g.cx(), p.cy() - g.cy());
}

/// Centre offset with each axis divided by the ground-truth extent.
inline double norm_center_error(const BBox& p, const BBox& g) {
  return std::hypot((p.cx() - g.cx()) / g.w, (p.cy() - g.cy()) / g.h);
}

namespace detail {
inline void require_same_length(const std::vector<BBox>& p, const std::vector<BBox>& g) {
  if (p.size() != g.size()) {
    contract_fail("metrics: ", p.size(), " predictions vs ", g.size(), " ground-truth boxes");
  }
  if (p.empty()) contract_fail("metrics: empty sequence");
}
}  // namespace detail

/// Mean over thresholds τ = i/20 of the fraction of frames with IoU > τ.
inline double suc_metric(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
  detail::require_same_length(pred, gt);
  std::vector<double> ious;
  for (std::size_t i = 0; i < pred.size(); ++i) ious.push_back(iou(pred[i], gt[i]));
  double auc = 0.0;
  for (std::size_t k = 0; k < kSuccessThresholds; ++k) {
    const double tau = double(k) / double(kSuccessThresholds - 1);
    std::size_t hits = 0;
    for (double v : ious) hits += v > tau;
    auc += double(hits) / double(ious.size());
  }
  return auc / double(kSuccessThresholds);
}

inline double pre_metric(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
  detail::require_same_length(pred, gt);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += center_error(pred[i], gt[i]) <= kPrecisionPixels;
  return double(hits) / double(pred.size());
}

inline double normp_metric(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
  detail::require_same_length(pred, gt);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += norm_center_error(pred[i], gt[i]) <= kNormPrecision;
  return double(hits) / double(pred.size());
}

inline MetricReport evaluate(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
  MetricReport r;
  r.suc = suc_metric(pred, gt);
  r.pre = pre_metric(pred, gt);
  r.normp = normp_metric(pred, gt);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    r.ious.push_back(iou(pred[i], gt[i]));
    r.center_errors.push_back(center_error(pred[i], gt[i]));
    r.norm_center_errors.push_back(norm_center_error(pred[i], gt[i]));
  }
  return r;
}

}  // namespace tirtrack
