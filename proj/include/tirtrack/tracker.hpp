#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "tirtrack/config.hpp"
#include "tirtrack/coord_vocab.hpp"
#include "tirtrack/decoder.hpp"
#include "tirtrack/image.hpp"

// Per-frame tracking: crop geometry, frame-of-reference mapping, the score
// evaluator and the dynamic-template update gate.

namespace tirtrack {

/// Square crop centred on (cx, cy) with side `side` (image px), resampled to
/// out_size × out_size.
struct CropSpec {
  double cx = 0, cy = 0, side = 1;
  std::size_t out_size = 1;
  double scale = 1;  // out_size / side
  std::size_t frame_width = 0, frame_height = 0;

  double x0() const { return cx - 0.5 * side; }
  double y0() const { return cy - 0.5 * side; }
};

inline CropSpec make_crop_spec(const Image& frame, const BBox& box, double factor,
                               std::size_t out_size) {
  if (frame.empty()) contract_fail("crop: empty frame");
  if (!box.valid()) contract_fail("crop: box needs positive extents");
  CropSpec s;
  s.cx = box.cx();
  s.cy = box.cy();
  s.side = factor * std::sqrt(box.w * box.h);
  s.out_size = out_size;
  s.scale = double(out_size) / s.side;
  s.frame_width = frame.width;
  s.frame_height = frame.height;
  return s;
}

/// Bilinear resample of the crop region; taps outside the frame read the
/// frame's mean intensity.
inline Image crop_resize(const Image& frame, const CropSpec& spec) {
  if (frame.empty()) contract_fail("crop: empty frame");
  const double pad = frame.mean();
  const double step = spec.side / double(spec.out_size);
  auto tap = [&](std::ptrdiff_t x, std::ptrdiff_t y) {
    if (x < 0 || y < 0 || x >= std::ptrdiff_t(frame.width) || y >= std::ptrdiff_t(frame.height))
      return pad;
    return frame.at(std::size_t(x), std::size_t(y));
  };
  Image out(spec.out_size, spec.out_size);
  for (std::size_t j = 0; j < spec.out_size; ++j) {
    const double sy = spec.y0() + (double(j) + 0.5) * step - 0.5;
    const double fy = std::floor(sy);
    const double ty = sy - fy;
    const auto y0 = std::ptrdiff_t(fy);
    for (std::size_t i = 0; i < spec.out_size; ++i) {
      const double sx = spec.x0() + (double(i) + 0.5) * step - 0.5;
      const double fx = std::floor(sx);
      const double tx = sx - fx;
      const auto x0 = std::ptrdiff_t(fx);
      const double top = tap(x0, y0) * (1 - tx) + tap(x0 + 1, y0) * tx;
      const double bot = tap(x0, y0 + 1) * (1 - tx) + tap(x0 + 1, y0 + 1) * tx;
      out.at(i, j) = top * (1 - ty) + bot * ty;
    }
  }
  return out;
}

/// Template crop: side template_factor·√(w·h) around the box centre.
inline Image crop_template(const Image& frame, const BBox& box, const ModelConfig& cfg) {
  return crop_resize(frame, make_crop_spec(frame, box, cfg.template_factor, cfg.template_size));
}

/// Search crop: side search_factor·√(w·h) around the previous box centre.
inline std::pair<Image, CropSpec> crop_search(const Image& frame, const BBox& prev_box,
                                              const ModelConfig& cfg) {
  CropSpec spec = make_crop_spec(frame, prev_box, cfg.search_factor, cfg.search_size);
  return {crop_resize(frame, spec), spec};
}

/// Image-px box → crop-normalized box (unclamped).
inline BBox map_box_to_crop(const BBox& b, const CropSpec& spec) {
  return {(b.x - spec.x0()) / spec.side, (b.y - spec.y0()) / spec.side, b.w / spec.side,
          b.h / spec.side, BoxFrame::kNormalized};
}

/// Crop-normalized box → image-px box, clamped to the frame with extents of
/// at least one pixel.
inline BBox map_box_to_image(const BBox& b, const CropSpec& spec) {
  const double fw = double(spec.frame_width), fh = double(spec.frame_height);
  auto clamp_axis = [](double lo, double extent, double limit) {
    const double a = std::clamp(lo, 0.0, std::max(limit - 1.0, 0.0));
    const double b = std::clamp(lo + extent, a + 1.0, std::max(limit, a + 1.0));
    return std::pair{a, b - a};
  };
  const auto [x, w] = clamp_axis(spec.x0() + b.x * spec.side, b.w * spec.side, fw);
  const auto [y, h] = clamp_axis(spec.y0() + b.y * spec.side, b.h * spec.side, fh);
  return {x, y, w, h, BoxFrame::kImagePx};
}

/// Mean of the per-token softmax maxima.
inline double score_evaluator(std::span<const double> scores) {
  if (scores.empty()) contract_fail("score_evaluator: no scores");
  return std::accumulate(scores.begin(), scores.end(), 0.0) / double(scores.size());
}

/// Anything that maps (fixed template, dynamic template, search crop) to a
/// greedy token decode.
template <typename P>
concept BoxPredictor = requires(const P& p, const Tensor& t) {
  { p.predict(t, t, t) } -> std::convertible_to<DecodeResult>;
  { p.vocab() } -> std::convertible_to<const CoordVocab&>;
};

struct TrackerState {
  Tensor fixed_template;
  Tensor dynamic_template;
  BBox last_box;
  std::size_t frame_index = 0;
  std::size_t last_update_frame = 0;
  double lambda = 0.6;
  std::size_t zu = 25;
};

inline TrackerState init_tracker(const Image& first_frame, const BBox& init_box,
                                 const ModelConfig& cfg) {
  TrackerState s;
  s.fixed_template = to_network_input(crop_template(first_frame, init_box, cfg));
  s.dynamic_template = s.fixed_template;
  s.last_box = init_box;
  s.lambda = cfg.lambda;
  s.zu = cfg.zu;
  return s;
}

/// True when both gates pass: enough frames since the last refresh, and a
/// score strictly above λ.
inline bool should_update_template(const TrackerState& s, double score) {
  return s.frame_index - s.last_update_frame >= s.zu && score > s.lambda;
}

/// Refreshes the dynamic template from `frame` at `pred_box` when the gates
/// pass; the fixed template never changes.
inline TrackerState maybe_update_template(TrackerState s, const Image& frame, const BBox& pred_box,
                                          double score, const ModelConfig& cfg) {
  if (should_update_template(s, score)) {
    s.dynamic_template = to_network_input(crop_template(frame, pred_box, cfg));
    s.last_update_frame = s.frame_index;
  }
  return s;
}

struct FrameResult {
  BBox box;
  double score = 0.0;
  bool template_updated = false;
};

/// Advances the state by one frame.
template <BoxPredictor P>
FrameResult track_frame(TrackerState& state, const P& predictor, const Image& frame,
                        const ModelConfig& cfg) {
  state.frame_index += 1;
  auto [search, spec] = crop_search(frame, state.last_box, cfg);
  const DecodeResult dec =
      predictor.predict(state.fixed_template, state.dynamic_template, to_network_input(search));
  FrameResult r;
  try {
    const BBox norm = predictor.vocab().decode_tokens({dec.tokens.begin(), dec.tokens.end()});
    r.box = map_box_to_image(norm, spec);
    r.score = score_evaluator(dec.scores);
  } catch (const DecodeError&) {
    r.box = state.last_box;
    r.score = 0.0;
  }
  const std::size_t before = state.last_update_frame;
  state = maybe_update_template(std::move(state), frame, r.box, r.score, cfg);
  r.template_updated = state.last_update_frame != before;
  state.last_box = r.box;
  return r;
}

struct TrackResult {
  std::vector<BBox> boxes;
  std::vector<double> scores;
  std::vector<std::size_t> update_frames;
};

/// Frame 0 yields `init_box` (score 1); frames 1..N−1 are tracked.
template <BoxPredictor P>
TrackResult track_sequence(const P& predictor, const std::vector<Image>& frames,
                           const BBox& init_box, const ModelConfig& cfg) {
  if (frames.empty()) contract_fail("track_sequence: no frames");
  TrackResult out;
  TrackerState state = init_tracker(frames[0], init_box, cfg);
  out.boxes.push_back(init_box);
  out.scores.push_back(1.0);
  for (std::size_t i = 1; i < frames.size(); ++i) {
    const FrameResult r = track_frame(state, predictor, frames[i], cfg);
    out.boxes.push_back(r.box);
    out.scores.push_back(r.score);
    if (r.template_updated) out.update_frames.push_back(state.frame_index);
  }
  return out;
}

}  // namespace tirtrack
