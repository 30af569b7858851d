#include "test_util.hpp"

#include <bit>

using namespace tt;

namespace {

Image gradient_frame(std::size_t w, std::size_t h) {
  Image img(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) img.at(x, y) = double((x * 7 + y * 3) % 256);
  return img;
}

/// Always emits the same four tokens with fixed scores.
struct StubPredictor {
  CoordVocab v{100};
  std::array<Token, 4> tokens{41, 41, 20, 20};
  std::array<double, 4> scores{0.7, 0.8, 0.9, 0.6};
  mutable std::size_t calls = 0;

  DecodeResult predict(const Tensor&, const Tensor&, const Tensor&) const {
    ++calls;
    return {tokens, scores};
  }
  const CoordVocab& vocab() const { return v; }
};

ModelConfig full_crops() { return ModelConfig::full(); }

}  // namespace

TEST(Crop, TemplateGeometry) {
  const Image frame(400, 400, 10.0);
  const BBox box{100, 100, 40, 40, BoxFrame::kImagePx};
  const CropSpec s = make_crop_spec(frame, box, full_crops().template_factor, 128);
  EXPECT_DOUBLE_EQ(s.side, 80.0);
  EXPECT_DOUBLE_EQ(s.cx, 120.0);
  EXPECT_DOUBLE_EQ(s.x0(), 80.0);
  EXPECT_DOUBLE_EQ(s.y0() + s.side, 160.0);
  const Image crop = crop_template(frame, box, full_crops());
  EXPECT_EQ(crop.width, 128u);
  EXPECT_EQ(crop.height, 128u);
}

TEST(Crop, SearchGeometry) {
  const Image frame(400, 400, 10.0);
  const auto [crop, s] = crop_search(frame, {100, 100, 40, 40, BoxFrame::kImagePx}, full_crops());
  EXPECT_DOUBLE_EQ(s.side, 180.0);
  EXPECT_DOUBLE_EQ(s.x0(), 30.0);
  EXPECT_DOUBLE_EQ(s.x0() + s.side, 210.0);
  EXPECT_DOUBLE_EQ(s.scale, 1.6);
  EXPECT_EQ(crop.width, 288u);
}

TEST(Crop, ConstantFrameGivesConstantCrop) {
  const Image frame(64, 48, 93.0);
  const Image crop = crop_template(frame, {-10, 30, 30, 20, BoxFrame::kImagePx}, full_crops());
  for (double p : crop.pixels) ASSERT_EQ(p, 93.0);
}

TEST(Crop, OutOfBoundsUsesFrameMean) {
  const Image frame = gradient_frame(60, 50);
  const CropSpec s = make_crop_spec(frame, {0, 0, 20, 20, BoxFrame::kImagePx}, 4.0, 40);
  const Image crop = crop_resize(frame, s);
  // Crop covers [-30, 50): its first rows and columns fall fully outside.
  EXPECT_DOUBLE_EQ(crop.at(0, 0), frame.mean());
  EXPECT_DOUBLE_EQ(crop.at(5, 0), frame.mean());
  EXPECT_DOUBLE_EQ(crop.at(0, 30), frame.mean());
  EXPECT_NE(crop.at(30, 30), frame.mean());
}

TEST(Crop, InteriorCropSamplesFrameExactlyAtUnitScale) {
  const Image frame = gradient_frame(100, 100);
  // side 40 → 40 px output: each output pixel centre lands on a source pixel centre.
  const CropSpec s = make_crop_spec(frame, {40, 40, 20, 20, BoxFrame::kImagePx}, 2.0, 40);
  const Image crop = crop_resize(frame, s);
  for (std::size_t y = 0; y < 40; ++y)
    for (std::size_t x = 0; x < 40; ++x) ASSERT_DOUBLE_EQ(crop.at(x, y), frame.at(x + 30, y + 30));
}

TEST(Crop, EmptyFrameRejected) {
  EXPECT_THROW(crop_template(Image{}, {1, 1, 2, 2, BoxFrame::kImagePx}, full_crops()), ContractViolation);
  EXPECT_THROW(crop_template(Image(10, 10), {1, 1, 0, 2, BoxFrame::kImagePx}, full_crops()),
               ContractViolation);
}

TEST(CropMapping, RoundtripOnRandomBoxes) {
  const Image frame(640, 512);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> ext(4, 80), pos(0, 1);
  for (int i = 0; i < 10000; ++i) {
    const double w = ext(rng), h = ext(rng);
    const BBox prev{pos(rng) * (640 - w), pos(rng) * (512 - h), w, h, BoxFrame::kImagePx};
    const CropSpec s = make_crop_spec(frame, prev, 4.5, 288);
    const double bw = std::min(ext(rng), 640.0 - 1), bh = std::min(ext(rng), 512.0 - 1);
    const BBox b{pos(rng) * (640 - bw), pos(rng) * (512 - bh), bw, bh, BoxFrame::kImagePx};
    const BBox back = map_box_to_image(map_box_to_crop(b, s), s);
    ASSERT_NEAR(back.x, b.x, 1e-9);
    ASSERT_NEAR(back.y, b.y, 1e-9);
    ASSERT_NEAR(back.w, b.w, 1e-9);
    ASSERT_NEAR(back.h, b.h, 1e-9);
  }
}

TEST(CropMapping, UnitBoxIsCropRegionAndCentredBoxKeepsCentre) {
  const Image frame(1000, 1000);
  const CropSpec s = make_crop_spec(frame, {400, 300, 40, 40, BoxFrame::kImagePx}, 4.5, 288);
  const BBox full = map_box_to_image({0, 0, 1, 1, BoxFrame::kNormalized}, s);
  EXPECT_NEAR(full.x, s.x0(), 1e-12);
  EXPECT_NEAR(full.y, s.y0(), 1e-12);
  EXPECT_NEAR(full.w, s.side, 1e-12);
  const BBox mid = map_box_to_image({0.4, 0.45, 0.2, 0.1, BoxFrame::kNormalized}, s);
  EXPECT_NEAR(mid.cx(), s.cx, 1e-12);
  EXPECT_NEAR(mid.cy(), s.cy, 1e-12);
  EXPECT_EQ(mid.frame, BoxFrame::kImagePx);
}

TEST(CropMapping, ClampsToFrameWithMinimumExtent) {
  const Image frame(100, 80);
  const CropSpec s = make_crop_spec(frame, {80, 60, 20, 20, BoxFrame::kImagePx}, 4.5, 64);
  const BBox b = map_box_to_image({0.99, 0.99, 0.001, 0.001, BoxFrame::kNormalized}, s);
  EXPECT_LE(b.x + b.w, 100.0);
  EXPECT_LE(b.y + b.h, 80.0);
  EXPECT_GE(b.w, 1.0);
  EXPECT_GE(b.h, 1.0);
}

TEST(ScoreEvaluator, Mean) {
  EXPECT_NEAR(score_evaluator(std::vector<double>{0.7, 0.8, 0.9, 0.6}), 0.75, 1e-15);
  EXPECT_EQ(score_evaluator(std::vector<double>{1, 1, 1, 1}), 1.0);
  EXPECT_EQ(score_evaluator(std::vector<double>{0.1, 0.9, 0.3, 0.2}),
            score_evaluator(std::vector<double>{0.3, 0.1, 0.2, 0.9}));
  EXPECT_THROW(score_evaluator(std::vector<double>{}), ContractViolation);
}

TEST(TemplateUpdate, GateCases) {
  const ModelConfig cfg = ModelConfig::toy();
  const Image frame = gradient_frame(128, 128);
  const TrackerState s0 = init_tracker(frame, {40, 40, 20, 20, BoxFrame::kImagePx}, cfg);
  EXPECT_TRUE(std::ranges::equal(s0.fixed_template.data(), s0.dynamic_template.data()));
  auto at = [&](std::size_t f) {
    TrackerState s = s0;
    s.frame_index = f;
    return s;
  };
  const BBox pred{50, 44, 20, 20, BoxFrame::kImagePx};
  EXPECT_EQ(maybe_update_template(at(25), frame, pred, 0.75, cfg).last_update_frame, 25u);
  EXPECT_EQ(maybe_update_template(at(25), frame, pred, 0.55, cfg).last_update_frame, 0u);
  EXPECT_EQ(maybe_update_template(at(10), frame, pred, 0.95, cfg).last_update_frame, 0u);
  EXPECT_EQ(maybe_update_template(at(25), frame, pred, 0.6, cfg).last_update_frame, 0u);  // strict
  const TrackerState u = maybe_update_template(at(25), frame, pred, 0.75, cfg);
  const Tensor want = to_network_input(crop_template(frame, pred, cfg));
  EXPECT_TRUE(std::ranges::equal(u.dynamic_template.data(), want.data()));
  EXPECT_TRUE(std::ranges::equal(u.fixed_template.data(), s0.fixed_template.data()));
}

TEST(TemplateUpdate, ScriptedSequenceUpdatesAt25And51) {
  ModelConfig cfg = ModelConfig::toy();
  cfg.lambda = 0.6;
  cfg.zu = 25;
  const Image frame = gradient_frame(128, 128);
  TrackerState s = init_tracker(frame, {40, 40, 20, 20, BoxFrame::kImagePx}, cfg);
  const std::vector<std::pair<std::size_t, double>> script{{25, 0.75}, {35, 0.95}, {50, 0.55}, {51, 0.61}};
  std::vector<std::size_t> updates;
  for (const auto& [f, score] : script) {
    s.frame_index = f;
    const std::size_t before = s.last_update_frame;
    s = maybe_update_template(std::move(s), frame, {40, 40, 20, 20, BoxFrame::kImagePx}, score, cfg);
    if (s.last_update_frame != before) updates.push_back(f);
  }
  EXPECT_EQ(updates, (std::vector<std::size_t>{25, 51}));
}

TEST(TrackFrame, StubRecentresOnPreviousBox) {
  const ModelConfig cfg = ModelConfig::toy();
  const StubPredictor stub;
  const Image frame = gradient_frame(128, 128);
  TrackerState s = init_tracker(frame, {50, 40, 16, 16, BoxFrame::kImagePx}, cfg);
  for (int i = 0; i < 5; ++i) {
    const BBox prev = s.last_box;
    const std::size_t idx = s.frame_index;
    const auto [crop, spec] = crop_search(frame, prev, cfg);
    const FrameResult r = track_frame(s, stub, frame, cfg);
    const BBox want = map_box_to_image(stub.v.decode_tokens({41, 41, 20, 20}), spec);
    EXPECT_EQ(r.box.x, want.x);
    EXPECT_EQ(r.box.w, want.w);
    // tokens 41/20 put the box centre 0.0025 crop-widths from the crop centre
    EXPECT_NEAR(r.box.cx(), prev.cx() + 0.0025 * spec.side, 1e-9);
    EXPECT_NEAR(r.score, 0.75, 1e-15);
    EXPECT_EQ(s.frame_index, idx + 1);
    EXPECT_EQ(s.last_box.x, r.box.x);
  }
}

TEST(TrackFrame, DegenerateGenerationHoldsPreviousBox) {
  const ModelConfig cfg = ModelConfig::toy();
  StubPredictor stub;
  stub.tokens = {41, stub.v.end_token(), 20, 20};
  const Image frame = gradient_frame(128, 128);
  TrackerState s = init_tracker(frame, {50, 40, 16, 16, BoxFrame::kImagePx}, cfg);
  const BBox prev = s.last_box;
  const FrameResult r = track_frame(s, stub, frame, cfg);
  EXPECT_EQ(r.score, 0.0);
  EXPECT_EQ(r.box.x, prev.x);
  EXPECT_EQ(r.box.w, prev.w);
}

TEST(TrackSequence, LengthsAndSingleFrame) {
  ModelConfig cfg = ModelConfig::toy();
  cfg.zu = 2;
  const StubPredictor stub;
  const BBox init{50, 40, 16, 16, BoxFrame::kImagePx};
  const TrackResult one = track_sequence(stub, {gradient_frame(128, 128)}, init, cfg);
  ASSERT_EQ(one.boxes.size(), 1u);
  EXPECT_EQ(one.boxes[0].x, init.x);
  EXPECT_EQ(stub.calls, 0u);
  const std::vector<Image> frames(7, gradient_frame(128, 128));
  const TrackResult r = track_sequence(stub, frames, init, cfg);
  EXPECT_EQ(r.boxes.size(), 7u);
  EXPECT_EQ(r.scores.size(), 7u);
  EXPECT_EQ(r.update_frames, (std::vector<std::size_t>{2, 4, 6}));
  EXPECT_THROW(track_sequence(stub, {}, init, cfg), ContractViolation);
}

TEST(TrackSequence, FixedTemplateConstantAndModelDeterministic) {
  ModelConfig cfg = ModelConfig::toy();
  cfg.enc_layers = 1;
  cfg.zu = 1;
  cfg.lambda = 0.0;
  const Model m(cfg, 3);
  const SynthScene scene = random_scenes(cfg, 1, 4).front();
  const SynthSequence seq = gen_sequence(scene);
  const std::vector<Image> frames(seq.frames.begin(), seq.frames.begin() + 6);
  TrackerState s = init_tracker(frames[0], seq.boxes[0], cfg);
  const Tensor fixed = s.fixed_template;
  std::vector<BBox> boxes;
  for (std::size_t i = 1; i < frames.size(); ++i) {
    const FrameResult r = track_frame(s, m, frames[i], cfg);
    boxes.push_back(r.box);
    ASSERT_TRUE(std::ranges::equal(s.fixed_template.data(), fixed.data()));
    if (r.template_updated) {
      const Tensor want = to_network_input(crop_template(frames[i], r.box, cfg));
      ASSERT_TRUE(std::ranges::equal(s.dynamic_template.data(), want.data()));
    }
  }
  const TrackResult a = track_sequence(m, frames, seq.boxes[0], cfg);
  const TrackResult b = track_sequence(m, frames, seq.boxes[0], cfg);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    EXPECT_EQ(std::bit_cast<std::uint64_t>(a.boxes[i].x), std::bit_cast<std::uint64_t>(b.boxes[i].x));
    EXPECT_EQ(std::bit_cast<std::uint64_t>(a.scores[i]), std::bit_cast<std::uint64_t>(b.scores[i]));
  }
  for (std::size_t i = 1; i < frames.size(); ++i) EXPECT_EQ(a.boxes[i].x, boxes[i - 1].x);
}
