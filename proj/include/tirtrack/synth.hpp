#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tirtrack/config.hpp"
#include "tirtrack/coord_vocab.hpp"
#include "tirtrack/image.hpp"

// Synthetic thermal-like sequences: warm Gaussian blobs drifting over a noisy
// background, with optional distractors and occlusion intervals.

namespace tirtrack {

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Gaussian-profile blob. The tight box spans ±2σ on each axis, so σ = extent/4.
struct Blob {
  double cx = 0, cy = 0;
  double w = 16, h = 16;
  double intensity = 200;  // peak added over background
  double vx = 0, vy = 0;   // px per frame
  double scale_drift = 0;  // relative extent change per frame

  double cx_at(std::size_t t) const { return cx + vx * double(t); }
  double cy_at(std::size_t t) const { return cy + vy * double(t); }
  double scale_at(std::size_t t) const { return std::pow(1.0 + scale_drift, double(t)); }
  BBox box_at(std::size_t t) const {
    const double s = scale_at(t), bw = w * s, bh = h * s;
    return {cx_at(t) - 0.5 * bw, cy_at(t) - 0.5 * bh, bw, bh, BoxFrame::kImagePx};
  }
};

/// Frames [start, end) in which the target is not drawn.
struct Occlusion {
  std::size_t start = 0, end = 0;
};

struct SynthScene {
  std::size_t width = 128, height = 128, frames = 40;
  double background = 60;
  double noise = 8;  // per-pixel Gaussian standard deviation
  Blob target;
  std::vector<Blob> distractors;
  std::vector<Occlusion> occlusions;
  std::uint64_t seed = 0;
};

struct SynthSequence {
  std::vector<Image> frames;
  std::vector<BBox> boxes;
};

inline bool occluded(const SynthScene& s, std::size_t t) {
  return std::any_of(s.occlusions.begin(), s.occlusions.end(),
                     [t](const Occlusion& o) { return t >= o.start && t < o.end; });
}

inline BBox ground_truth_at(const SynthScene& s, std::size_t t) {
  const BBox b = s.target.box_at(t);
  if (b.x + b.w <= 0 || b.y + b.h <= 0 || b.x >= double(s.width) || b.y >= double(s.height)) {
    throw GenerationError("synth: target leaves the frame at t=" + std::to_string(t));
  }
  return b;
}

namespace detail {

inline void draw_blob(Image& img, const Blob& b, std::size_t t) {
  const BBox box = b.box_at(t);
  const double sx = box.w / 4.0, sy = box.h / 4.0;
  const double cx = b.cx_at(t), cy = b.cy_at(t);
  const auto x0 = std::max<std::ptrdiff_t>(0, std::ptrdiff_t(std::floor(cx - 4 * sx)));
  const auto x1 = std::min<std::ptrdiff_t>(std::ptrdiff_t(img.width) - 1, std::ptrdiff_t(std::ceil(cx + 4 * sx)));
  const auto y0 = std::max<std::ptrdiff_t>(0, std::ptrdiff_t(std::floor(cy - 4 * sy)));
  const auto y1 = std::min<std::ptrdiff_t>(std::ptrdiff_t(img.height) - 1, std::ptrdiff_t(std::ceil(cy + 4 * sy)));
  for (std::ptrdiff_t y = y0; y <= y1; ++y) {
    const double dy = (double(y) + 0.5 - cy) / sy;
    for (std::ptrdiff_t x = x0; x <= x1; ++x) {
      const double dx = (double(x) + 0.5 - cx) / sx;
      img.at(std::size_t(x), std::size_t(y)) += b.intensity * std::exp(-0.5 * (dx * dx + dy * dy));
    }
  }
}

}  // namespace detail

/// Frame `t` alone; noise is drawn from a stream keyed by (seed, t), so frames
/// can be rendered in any order. Values are rounded to 8-bit levels.
inline Image render_frame(const SynthScene& s, std::size_t t) {
  if (s.width == 0 || s.height == 0) throw GenerationError("synth: empty frame size");
  Image img(s.width, s.height, s.background);
  if (s.noise > 0) {
    std::seed_seq seq{std::uint64_t(s.seed), std::uint64_t(t), std::uint64_t(0x7e4d)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> n(0.0, s.noise);
    for (double& p : img.pixels) p += n(rng);
  }
  for (const Blob& d : s.distractors) detail::draw_blob(img, d, t);
  if (!occluded(s, t)) detail::draw_blob(img, s.target, t);
  for (double& p : img.pixels) p = std::clamp(std::round(p), 0.0, 255.0);
  return img;
}

inline SynthSequence gen_sequence(const SynthScene& s) {
  SynthSequence out;
  for (std::size_t t = 0; t < s.frames; ++t) {
    out.boxes.push_back(ground_truth_at(s, t));
    out.frames.push_back(render_frame(s, t));
  }
  return out;
}

/// Draws a scene whose target stays inside the frame for the whole sequence.
inline SynthScene random_scene(const ModelConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  SynthScene s;
  s.width = s.height = cfg.frame_size;
  s.frames = cfg.frames_per_sequence;
  s.background = uni(40, 90);
  s.noise = cfg.noise;
  s.seed = rng();
  const double size = double(cfg.frame_size);

  Blob& t = s.target;
  t.w = uni(cfg.target_min, cfg.target_max);
  t.h = std::clamp(t.w * std::exp(uni(-0.35, 0.35)), cfg.target_min * 0.7, cfg.target_max * 1.2);
  t.intensity = uni(110, 170);
  t.scale_drift = uni(-cfg.scale_drift_max, cfg.scale_drift_max);
  const double margin = 0.75 * std::max(t.w, t.h) * std::max(1.0, t.scale_at(s.frames));
  const double span = double(s.frames > 0 ? s.frames - 1 : 0);
  auto place = [&](double& c, double& v) {
    c = uni(margin, size - margin);
    v = uni(-cfg.speed_max, cfg.speed_max);
    if (c + v * span < margin || c + v * span > size - margin) v = -v;
    if (c + v * span < margin || c + v * span > size - margin) v = 0;
  };
  place(t.cx, t.vx);
  place(t.cy, t.vy);

  for (std::size_t i = 0; i < cfg.distractors; ++i) {
    Blob d;
    d.w = uni(cfg.target_min, cfg.target_max);
    d.h = d.w * std::exp(uni(-0.35, 0.35));
    d.intensity = uni(0.35, 0.6) * t.intensity;
    d.cx = uni(0, size);
    d.cy = uni(0, size);
    d.vx = uni(-cfg.speed_max, cfg.speed_max);
    d.vy = uni(-cfg.speed_max, cfg.speed_max);
    s.distractors.push_back(d);
  }
  return s;
}

inline std::vector<SynthScene> random_scenes(const ModelConfig& cfg, std::size_t count,
                                             std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<SynthScene> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(random_scene(cfg, rng));
  return out;
}

/// Scene file: `key = value` lines. Blob keys are prefixed `target.`;
/// `distractor = cx cy w h intensity vx vy [drift]` and `occlusion = start end`
/// may repeat.
inline SynthScene parse_scene(std::istream& is) {
  SynthScene s;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& why) {
    throw ConfigError("scene line " + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    std::istringstream vs(detail::trim(line.substr(eq + 1)));
    auto read = [&](auto& dst) {
      if (!(vs >> dst)) fail("bad value for '" + key + "'");
    };
    if (key == "width") read(s.width);
    else if (key == "height") read(s.height);
    else if (key == "frames") read(s.frames);
    else if (key == "background") read(s.background);
    else if (key == "noise") read(s.noise);
    else if (key == "seed") read(s.seed);
    else if (key == "target.cx") read(s.target.cx);
    else if (key == "target.cy") read(s.target.cy);
    else if (key == "target.w") read(s.target.w);
    else if (key == "target.h") read(s.target.h);
    else if (key == "target.intensity") read(s.target.intensity);
    else if (key == "target.vx") read(s.target.vx);
    else if (key == "target.vy") read(s.target.vy);
    else if (key == "target.scale_drift") read(s.target.scale_drift);
    else if (key == "distractor") {
      Blob d;
      read(d.cx); read(d.cy); read(d.w); read(d.h); read(d.intensity); read(d.vx); read(d.vy);
      vs >> d.scale_drift;
      s.distractors.push_back(d);
    } else if (key == "occlusion") {
      Occlusion o;
      read(o.start);
      read(o.end);
      s.occlusions.push_back(o);
    } else {
      fail("unknown key '" + key + "'");
    }
  }
  if (!(s.target.w > 0 && s.target.h > 0)) throw ConfigError("scene: target extents must be positive");
  return s;
}

inline SynthScene load_scene(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("scene: cannot open " + path);
  return parse_scene(is);
}

}  // namespace tirtrack
