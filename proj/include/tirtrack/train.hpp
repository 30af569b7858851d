#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "tirtrack/metrics.hpp"
#include "tirtrack/model.hpp"
#include "tirtrack/synth.hpp"
#include "tirtrack/tracker.hpp"

namespace tirtrack {

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// AdamW (decoupled weight decay) with one learning rate for parameters
/// whose name starts with "enc." and another for everything else.
class AdamW {
 public:
  AdamW(double lr_encoder, double lr_other, double weight_decay, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8)
      : lr_encoder_(lr_encoder), lr_other_(lr_other), wd_(weight_decay), b1_(beta1),
        b2_(beta2), eps_(eps) {}

  double lr_for(const std::string& name) const {
    return scale_ * (name.rfind("enc.", 0) == 0 ? lr_encoder_ : lr_other_);
  }

  /// Multiplier applied to both group rates (learning-rate schedule).
  void set_lr_scale(double s) { scale_ = s; }

  void step(ParamStore& store) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, double(t_));
    const double c2 = 1.0 - std::pow(b2_, double(t_));
    for (const auto& [name, entry] : store.entries()) {
      if (!entry.trainable) continue;
      Node* n = entry.var.node();
      if (n->grad.empty()) continue;
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.empty()) {
        m.assign(n->grad.size(), 0.0);
        v.assign(n->grad.size(), 0.0);
      }
      const double lr = lr_for(name);
      auto w = n->value.data_mut();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double g = n->grad[i];
        m[i] = b1_ * m[i] + (1 - b1_) * g;
        v[i] = b2_ * v[i] + (1 - b2_) * g * g;
        w[i] -= lr * ((m[i] / c1) / (std::sqrt(v[i] / c2) + eps_) + wd_ * w[i]);
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  double lr_encoder_, lr_other_, wd_, b1_, b2_, eps_;
  double scale_ = 1.0;
  std::size_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
inline double clip_grad_norm(ParamStore& store, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, e] : store.entries())
    for (double g : e.var.node()->grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (const auto& [name, e] : store.entries())
      for (double& g : e.var.node()->grad) g *= f;
  }
  return norm;
}

/// Draws one teacher-forcing example: fixed template from frame 0, dynamic
/// template from an earlier frame, search crop of frame t around a jittered
/// copy of its ground-truth box (standing in for the previous prediction).
inline TrainingSample sample_training_example(const SynthScene& scene, const ModelConfig& cfg,
                                              std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const std::size_t t = 1 + std::size_t(rng() % (scene.frames - 1));
  const std::size_t k = std::size_t(rng() % t);

  const BBox gt0 = ground_truth_at(scene, 0);
  const BBox gtk = ground_truth_at(scene, k);
  const BBox gtt = ground_truth_at(scene, t);

  const double sz = std::sqrt(gtt.w * gtt.h);
  const double s = std::exp(cfg.scale_jitter * u(rng));
  const double aspect = std::exp(0.5 * cfg.scale_jitter * u(rng));
  const double pw = gtt.w * s * aspect, ph = gtt.h * s / aspect;
  const double pcx = gtt.cx() + cfg.center_jitter * sz * u(rng);
  const double pcy = gtt.cy() + cfg.center_jitter * sz * u(rng);
  const BBox prior{pcx - 0.5 * pw, pcy - 0.5 * ph, pw, ph, BoxFrame::kImagePx};

  TrainingSample out;
  out.fixed_template = to_network_input(crop_template(render_frame(scene, 0), gt0, cfg));
  out.dynamic_template = k == 0 ? out.fixed_template
                                : to_network_input(crop_template(render_frame(scene, k), gtk, cfg));
  auto [search, spec] = crop_search(render_frame(scene, t), prior, cfg);
  out.search = to_network_input(search);
  out.target = map_box_to_crop(gtt, spec);
  return out;
}

struct TrainResult {
  Model model;
  std::vector<double> step_losses;   // batch-mean total loss per optimizer step
  std::vector<double> epoch_losses;  // mean of step losses per epoch
};

using ProgressFn = std::function<void(std::size_t epoch, double epoch_loss)>;

/// Cosine decay from 1 to `floor` over `total` steps.
inline double cosine_lr_scale(std::size_t step, std::size_t total, double floor = 0.05) {
  if (total <= 1) return 1.0;
  const double t = double(step) / double(total - 1);
  return floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

/// Teacher-forced training of ce + siou with AdamW, both learning-rate groups
/// following one cosine decay. Deterministic for a given config seed and
/// scene list.
inline TrainResult train_toy(const ModelConfig& cfg, const std::vector<SynthScene>& scenes,
                             std::size_t epochs, const ProgressFn& progress = {}) {
  if (scenes.empty()) contract_fail("train_toy: no scenes");
  TrainResult r{Model(cfg, cfg.seed), {}, {}};
  AdamW opt(cfg.lr_encoder, cfg.lr_other, cfg.weight_decay);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const std::size_t steps = std::max<std::size_t>(1, cfg.samples_per_epoch / cfg.batch_size);
  ParamStore& params = r.model.params();
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    double epoch_sum = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      params.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        const SynthScene& scene = scenes[rng() % scenes.size()];
        const TrainingSample sample = sample_training_example(scene, cfg, rng);
        LossReport loss = r.model.loss(sample);
        if (!std::isfinite(loss.total.item())) {
          throw DivergenceError("train_toy: non-finite loss at epoch " + std::to_string(epoch) +
                                " step " + std::to_string(s) + " (ce=" + std::to_string(loss.ce) +
                                ", siou=" + std::to_string(loss.siou) + ")");
        }
        batch_loss += loss.total.item();
        backward(scale(loss.total, 1.0 / double(cfg.batch_size)));
      }
      clip_grad_norm(params, cfg.grad_clip);
      opt.set_lr_scale(cosine_lr_scale(epoch * steps + s, epochs * steps));
      opt.step(params);
      for (const auto& [name, entry] : params.entries()) {
        for (double w : entry.var.value().data()) {
          if (!std::isfinite(w)) {
            throw DivergenceError("train_toy: parameter " + name + " became non-finite at epoch " +
                                  std::to_string(epoch) + " step " + std::to_string(s));
          }
        }
      }
      batch_loss /= double(cfg.batch_size);
      r.step_losses.push_back(batch_loss);
      epoch_sum += batch_loss;
    }
    r.epoch_losses.push_back(epoch_sum / double(steps));
    if (progress) progress(epoch, r.epoch_losses.back());
  }
  params.zero_grad();
  return r;
}

struct ToyData {
  std::vector<SynthScene> train;
  std::vector<SynthScene> held_out;
};

/// Training and held-out scenes drawn from disjoint streams of `cfg.seed`.
inline ToyData toy_data(const ModelConfig& cfg) {
  std::seed_seq train_seq{std::uint64_t(cfg.seed), std::uint64_t(1)};
  std::seed_seq held_seq{std::uint64_t(cfg.seed), std::uint64_t(2)};
  std::uint64_t train_seed = 0, held_seed = 0;
  {
    std::mt19937_64 a(train_seq), b(held_seq);
    train_seed = a();
    held_seed = b();
  }
  return {random_scenes(cfg, cfg.train_sequences, train_seed),
          random_scenes(cfg, cfg.eval_sequences, held_seed)};
}

struct EvalSummary {
  MetricReport overall;  // frames pooled across sequences
  std::vector<MetricReport> per_sequence;
};

/// Tracks every scene from its first ground-truth box and scores all frames.
template <BoxPredictor P>
EvalSummary evaluate_on_scenes(const P& predictor, const std::vector<SynthScene>& scenes,
                               const ModelConfig& cfg) {
  EvalSummary out;
  std::vector<BBox> all_pred, all_gt;
  for (const SynthScene& scene : scenes) {
    const SynthSequence seq = gen_sequence(scene);
    const TrackResult tr = track_sequence(predictor, seq.frames, seq.boxes.front(), cfg);
    out.per_sequence.push_back(evaluate(tr.boxes, seq.boxes));
    all_pred.insert(all_pred.end(), tr.boxes.begin(), tr.boxes.end());
    all_gt.insert(all_gt.end(), seq.boxes.begin(), seq.boxes.end());
  }
  out.overall = evaluate(all_pred, all_gt);
  return out;
}

}  // namespace tirtrack
