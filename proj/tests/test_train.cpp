#include "test_util.hpp"

#include <bit>

using namespace tt;

namespace {

ModelConfig tiny_config() {
  ModelConfig c = ModelConfig::toy();
  c.enc_layers = 1;
  c.embed_dim = 32;
  c.enc_heads = 2;
  c.dec_layers = 1;
  c.dec_hidden = 32;
  c.dec_heads = 2;
  c.nbins = 50;
  c.samples_per_epoch = 96;
  c.batch_size = 8;
  c.train_sequences = 6;
  c.eval_sequences = 2;
  c.frames_per_sequence = 12;
  return c;
}

bool same_params(const ParamStore& a, const ParamStore& b) {
  for (const std::string& n : a.names()) {
    const auto x = a.get(n).value().data(), y = b.get(n).value().data();
    for (std::size_t i = 0; i < x.size(); ++i)
      if (std::bit_cast<std::uint64_t>(x[i]) != std::bit_cast<std::uint64_t>(y[i])) return false;
  }
  return true;
}

double mean_loss(const Model& m, const std::vector<TrainingSample>& batch) {
  NoGradGuard no_grad;
  double s = 0.0;
  for (const auto& x : batch) s += m.loss(x).total.item();
  return s / double(batch.size());
}

}  // namespace

TEST(AdamW, FirstStepMatchesHandComputation) {
  ParamStore s;
  s.add("enc.a", Tensor({2}, {1.0, -2.0}));
  s.add("b", Tensor({1}, {0.5}));
  s.add("frozen", Tensor({1}, {3.0}), false);
  backward(sum(mul(s.get("enc.a"), Var::constant(Tensor({2}, {0.3, -4.0})))));
  backward(scale(sum(s.get("b")), 2.0));
  AdamW opt(0.1, 0.01, 0.5);
  opt.step(s);
  // Bias-corrected first step: m̂ = g, v̂ = g², so the update is lr·(sign(g) + wd·w) up to eps.
  const auto a = s.get("enc.a").value().data();
  EXPECT_NEAR(a[0], 1.0 - 0.1 * (1.0 + 0.5 * 1.0), 1e-7);
  EXPECT_NEAR(a[1], -2.0 - 0.1 * (-1.0 + 0.5 * -2.0), 1e-7);
  EXPECT_NEAR(s.get("b").value()[0], 0.5 - 0.01 * (1.0 + 0.5 * 0.5), 1e-7);
  EXPECT_EQ(s.get("frozen").value()[0], 3.0);
  EXPECT_EQ(opt.steps(), 1u);
  EXPECT_DOUBLE_EQ(opt.lr_for("enc.x"), 0.1);
  opt.set_lr_scale(0.5);
  EXPECT_DOUBLE_EQ(opt.lr_for("dec.x"), 0.005);
}

TEST(ClipGradNorm, ScalesToMaximum) {
  ParamStore s;
  s.add("a", Tensor({2}, {0, 0}));
  backward(sum(mul(s.get("a"), Var::constant(Tensor({2}, {3.0, 4.0})))));
  EXPECT_DOUBLE_EQ(clip_grad_norm(s, 1.0), 5.0);
  EXPECT_NEAR(s.grad("a")[0], 0.6, 1e-15);
  EXPECT_NEAR(s.grad("a")[1], 0.8, 1e-15);
  EXPECT_NEAR(clip_grad_norm(s, 10.0), 1.0, 1e-15);
  EXPECT_NEAR(s.grad("a")[1], 0.8, 1e-15);
}

TEST(CosineSchedule, Endpoints) {
  EXPECT_DOUBLE_EQ(cosine_lr_scale(0, 100), 1.0);
  EXPECT_NEAR(cosine_lr_scale(99, 100), 0.05, 1e-15);
  EXPECT_NEAR(cosine_lr_scale(99, 199), 0.525, 1e-12);
  EXPECT_DOUBLE_EQ(cosine_lr_scale(0, 1), 1.0);
}

TEST(TrainingSample, TargetCoversJitteredCrop) {
  const ModelConfig cfg = tiny_config();
  const auto scenes = random_scenes(cfg, 3, 1);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    const TrainingSample s = sample_training_example(scenes[std::size_t(i) % 3], cfg, rng);
    EXPECT_EQ(s.search.shape(), (Shape{1, cfg.search_size, cfg.search_size}));
    EXPECT_EQ(s.fixed_template.shape(), (Shape{1, cfg.template_size, cfg.template_size}));
    // center jitter ≤ 0.5·sz and scale jitter ≤ e^0.225 keep the target centre inside the crop
    ASSERT_GT(s.target.cx(), 0.0);
    ASSERT_LT(s.target.cx(), 1.0);
    ASSERT_GT(s.target.w, 0.1);
    ASSERT_LT(s.target.w, 0.4);
  }
}

TEST(TrainToy, ZeroEpochsLeavesInitialWeights) {
  const ModelConfig cfg = tiny_config();
  const auto scenes = random_scenes(cfg, 2, 1);
  const TrainResult r = train_toy(cfg, scenes, 0);
  EXPECT_TRUE(same_params(r.model.params(), Model(cfg, cfg.seed).params()));
  EXPECT_TRUE(r.epoch_losses.empty());
}

TEST(TrainToy, OneEpochLowersLossAndIsReproducible) {
  const ModelConfig cfg = tiny_config();
  const ToyData data = toy_data(cfg);
  std::mt19937_64 rng(77);
  std::vector<TrainingSample> probe;
  for (int i = 0; i < 16; ++i) probe.push_back(sample_training_example(data.train[std::size_t(i) % data.train.size()], cfg, rng));
  const double before = mean_loss(Model(cfg, cfg.seed), probe);
  std::vector<std::size_t> progress;
  const TrainResult a = train_toy(cfg, data.train, 1, [&](std::size_t e, double) { progress.push_back(e); });
  const TrainResult b = train_toy(cfg, data.train, 1);
  EXPECT_LT(mean_loss(a.model, probe), before);
  EXPECT_EQ(progress, std::vector<std::size_t>{0});
  ASSERT_EQ(a.step_losses.size(), cfg.samples_per_epoch / cfg.batch_size);
  for (std::size_t i = 0; i < a.step_losses.size(); ++i)
    EXPECT_EQ(std::bit_cast<std::uint64_t>(a.step_losses[i]), std::bit_cast<std::uint64_t>(b.step_losses[i]));
  EXPECT_TRUE(same_params(a.model.params(), b.model.params()));

  ModelConfig other = cfg;
  other.seed = 1;
  const TrainResult c = train_toy(other, toy_data(other).train, 1);
  EXPECT_NE(c.step_losses.front(), a.step_losses.front());
}

TEST(TrainToy, NonFiniteLossIsDivergence) {
  ModelConfig cfg = tiny_config();
  cfg.samples_per_epoch = 8;
  const auto scenes = random_scenes(cfg, 1, 1);
  // A NaN learning rate turns every weight into NaN after the first step.
  cfg.lr_other = std::nan("");
  EXPECT_THROW(train_toy(cfg, scenes, 2), DivergenceError);
}

TEST(ToyData, DisjointSeededStreams) {
  const ModelConfig cfg = tiny_config();
  const ToyData a = toy_data(cfg), b = toy_data(cfg);
  ASSERT_EQ(a.train.size(), cfg.train_sequences);
  ASSERT_EQ(a.held_out.size(), cfg.eval_sequences);
  EXPECT_EQ(a.train[0].seed, b.train[0].seed);
  for (const auto& h : a.held_out)
    for (const auto& t : a.train) EXPECT_NE(h.seed, t.seed);
}

TEST(Evaluate, PerfectPredictorScoresFullPrecision) {
  // A predictor that reads the answer from a side channel isolates the
  // tracking/evaluation plumbing from model quality.
  const ModelConfig cfg = tiny_config();
  const auto scenes = random_scenes(cfg, 2, 5);
  struct Oracle {
    const ModelConfig* cfg;
    CoordVocab v;
    mutable const SynthScene* scene = nullptr;
    mutable std::size_t t = 0;
    mutable BBox prev{};
    DecodeResult predict(const Tensor&, const Tensor&, const Tensor&) const {
      ++t;
      const Image frame = render_frame(*scene, t);
      const auto [crop, spec] = crop_search(frame, prev, *cfg);
      const BBox gt = ground_truth_at(*scene, t);
      const BBox n = map_box_to_crop(gt, spec);
      prev = map_box_to_image(v.decode_tokens({v.quantize(n.x), v.quantize(n.y), v.quantize(n.w), v.quantize(n.h)}), spec);
      return {{v.quantize(n.x), v.quantize(n.y), v.quantize(n.w), v.quantize(n.h)}, {1, 1, 1, 1}};
    }
    const CoordVocab& vocab() const { return v; }
  };
  Oracle o{&cfg, CoordVocab(cfg.nbins), nullptr, 0, {}};
  for (const auto& sc : scenes) {
    o.scene = &sc;
    o.t = 0;
    o.prev = ground_truth_at(sc, 0);
    const EvalSummary e = evaluate_on_scenes(o, {sc}, cfg);
    EXPECT_EQ(e.overall.pre, 1.0);
    EXPECT_GT(e.overall.suc, 0.85);
  }
}
