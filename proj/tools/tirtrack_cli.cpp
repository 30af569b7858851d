// Command-line front end: track, eval, train-toy, gradcheck, synth.
//
// Exit codes: 0 ok, 1 internal error, 2 usage error, 3 missing file,
// 4 malformed input, 5 gradient check failed, 6 training diverged,
// 7 scene generation failed. Failures print one stderr line:
//   error code=<n> kind=<kind> message=<text>

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include "tirtrack/tirtrack.hpp"

namespace {

using namespace tirtrack;

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kMissingFile = 3,
  kMalformed = 4,
  kCheckFailed = 5,
  kDiverged = 6,
  kGeneration = 7,
};

int report_error(int code, const std::string& kind, std::string message) {
  for (char& c : message)
    if (c == '\n' || c == '\r') c = ' ';
  std::cerr << "error code=" << code << " kind=" << kind << " message=" << message << std::endl;
  return code;
}

void require_file(const std::string& path) {
  if (!std::filesystem::is_regular_file(path)) throw MissingFileError("missing file: " + path);
}

ModelConfig read_config_file(const std::string& path) {
  require_file(path);
  try {
    return load_config(path);
  } catch (const ConfigError& e) {
    throw MalformedInputError(e.what());
  }
}

NamedTensors read_weights_file(const std::string& path) {
  require_file(path);
  try {
    return load_weights(path);
  } catch (const WeightsFormatError& e) {
    throw MalformedInputError(e.what());
  }
}

struct TrackArgs {
  std::string weights, seq, out, fusion;
  std::optional<double> lambda;
  std::optional<std::size_t> zu;
};

int cmd_track(const TrackArgs& a) {
  std::optional<FusionMode> fusion;
  if (!a.fusion.empty()) fusion = parse_fusion(a.fusion);
  const NamedTensors entries = read_weights_file(a.weights);
  Model model = [&] {
    try {
      return Model::from_weights(entries, fusion);
    } catch (const WeightsFormatError& e) {
      throw MalformedInputError(e.what());
    }
  }();
  ModelConfig cfg = model.config();
  if (a.lambda) cfg.lambda = *a.lambda;
  if (a.zu) cfg.zu = *a.zu;

  const SequenceData seq = load_sequence(a.seq);
  const TrackResult r = track_sequence(model, seq.frames, seq.ground_truth.front(), cfg);
  write_box_file(a.out, r.boxes, &r.scores);
  std::cout << "frames=" << r.boxes.size() << " template_updates=" << r.update_frames.size()
            << '\n';
  return kOk;
}

int cmd_eval(const std::string& pred_path, const std::string& gt_path,
             const std::string& report_path) {
  const auto pred = boxes_of(read_box_file(pred_path));
  const auto gt = boxes_of(read_box_file(gt_path));
  if (pred.size() != gt.size() || pred.empty()) {
    throw MalformedInputError("eval: " + std::to_string(pred.size()) + " predictions vs " +
                              std::to_string(gt.size()) + " ground-truth boxes");
  }
  const MetricReport m = evaluate(pred, gt);
  write_report(report_path, m);
  std::cout << std::setprecision(17) << "suc=" << m.suc << " pre=" << m.pre
            << " normp=" << m.normp << '\n';
  return kOk;
}

struct TrainArgs {
  std::string config, out_weights, fusion, loss_log;
  std::optional<std::uint64_t> seed;
  bool skip_eval = false;
};

int cmd_train(const TrainArgs& a) {
  ModelConfig cfg = read_config_file(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (!a.fusion.empty()) cfg.fusion = parse_fusion(a.fusion);
  cfg.validate();
  const ToyData data = toy_data(cfg);
  std::cout << std::setprecision(17);
  const TrainResult r = train_toy(cfg, data.train, cfg.epochs, [](std::size_t e, double loss) {
    std::cout << "epoch=" << e + 1 << " loss=" << loss << std::endl;
  });
  save_weights(a.out_weights, r.model.to_weights());
  if (!a.loss_log.empty()) {
    std::ofstream os(a.loss_log);
    if (!os) throw std::runtime_error("cannot write: " + a.loss_log);
    os << std::setprecision(17);
    for (std::size_t i = 0; i < r.step_losses.size(); ++i) os << i + 1 << ' ' << r.step_losses[i] << '\n';
  }
  if (!a.skip_eval && !data.held_out.empty()) {
    const EvalSummary ev = evaluate_on_scenes(r.model, data.held_out, cfg);
    std::cout << "heldout suc=" << ev.overall.suc << " pre=" << ev.overall.pre
              << " normp=" << ev.overall.normp << '\n';
  }
  return kOk;
}

int cmd_gradcheck(double tol, std::uint64_t seed, bool ops_only) {
  GradCheckOptions opt;
  opt.tol = tol;
  opt.seed = seed;
  bool ok = true;
  double worst = 0.0;
  std::cout << std::setprecision(6);
  for (const GradSuiteEntry& e : run_grad_suite(opt, !ops_only)) {
    ok = ok && e.report.passed;
    worst = std::max(worst, e.report.max_rel_error);
    std::cout << (e.report.passed ? "PASS " : "FAIL ") << e.name
              << " max_rel_error=" << e.report.max_rel_error
              << " coords=" << e.report.coords_checked;
    if (e.report.nonfinite_coord) std::cout << " nonfinite=" << *e.report.nonfinite_coord;
    if (!e.report.passed) std::cout << " worst=" << e.report.worst_param << '[' << e.report.worst_index << ']';
    std::cout << '\n';
  }
  std::cout << "gradcheck max_rel_error=" << worst << " tol=" << tol << " status="
            << (ok ? "pass" : "fail") << '\n';
  if (!ok) return report_error(kCheckFailed, "gradcheck_failed", "max relative error above tolerance");
  return kOk;
}

int cmd_synth(const std::string& scene_path, const std::string& out_dir) {
  require_file(scene_path);
  SynthScene scene;
  try {
    scene = load_scene(scene_path);
  } catch (const ConfigError& e) {
    throw MalformedInputError(e.what());
  }
  const SynthSequence seq = gen_sequence(scene);
  save_sequence(out_dir, seq.frames, seq.boxes);
  std::cout << "frames=" << seq.frames.size() << " out=" << out_dir << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tirtrack: coordinate-sequence tracker toolkit"};
  app.require_subcommand(1);

  TrackArgs track;
  double lambda = 0.0;
  std::size_t zu = 0;
  auto* t = app.add_subcommand("track", "Track a PGM sequence from its first ground-truth box");
  t->add_option("--weights", track.weights, "Weights file")->required();
  t->add_option("--seq", track.seq, "Sequence directory")->required();
  t->add_option("--out", track.out, "Prediction file (x,y,w,h,score per frame)")->required();
  t->add_option("--fusion", track.fusion, "Fusion mode override (mpfm|conf|addf)")
      ->check(CLI::IsMember({"mpfm", "conf", "addf"}));
  auto* lambda_opt = t->add_option("--lambda", lambda, "Template update score threshold");
  auto* zu_opt = t->add_option("--zu", zu, "Minimum frames between template updates");

  std::string pred, gt, report;
  auto* e = app.add_subcommand("eval", "Score predictions against ground truth");
  e->add_option("--pred", pred, "Prediction file")->required();
  e->add_option("--gt", gt, "Ground-truth file")->required();
  e->add_option("--report", report, "Report output file")->required();

  TrainArgs train;
  std::uint64_t train_seed = 0;
  auto* tr = app.add_subcommand("train-toy", "Train on synthetic sequences");
  tr->add_option("--config", train.config, "Config file")->required();
  tr->add_option("--out-weights", train.out_weights, "Weights output file")->required();
  auto* seed_opt = tr->add_option("--seed", train_seed, "Seed override");
  tr->add_option("--fusion", train.fusion, "Fusion mode override (mpfm|conf|addf)")
      ->check(CLI::IsMember({"mpfm", "conf", "addf"}));
  tr->add_option("--loss-log", train.loss_log, "Write per-step losses to this file");
  tr->add_flag("--no-eval", train.skip_eval, "Skip the held-out evaluation");

  double tol = 1e-4;
  std::uint64_t gc_seed = 0;
  bool ops_only = false;
  auto* g = app.add_subcommand("gradcheck", "Central-difference gradient checks");
  g->add_option("--tol", tol, "Maximum relative error");
  g->add_option("--seed", gc_seed, "Seed for inputs and probed coordinates");
  g->add_flag("--ops-only", ops_only, "Skip the full-pipeline checks");

  std::string scene, out_dir;
  auto* s = app.add_subcommand("synth", "Render a synthetic sequence from a scene file");
  s->add_option("--scene", scene, "Scene file")->required();
  s->add_option("--out", out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    return report_error(kUsage, "usage", ex.what());
  }

  try {
    if (*t) {
      if (*lambda_opt) track.lambda = lambda;
      if (*zu_opt) track.zu = zu;
      return cmd_track(track);
    }
    if (*e) return cmd_eval(pred, gt, report);
    if (*tr) {
      if (*seed_opt) train.seed = train_seed;
      return cmd_train(train);
    }
    if (*g) return cmd_gradcheck(tol, gc_seed, ops_only);
    if (*s) return cmd_synth(scene, out_dir);
  } catch (const MissingFileError& ex) {
    return report_error(kMissingFile, "missing_file", ex.what());
  } catch (const MalformedInputError& ex) {
    return report_error(kMalformed, "malformed_input", ex.what());
  } catch (const DivergenceError& ex) {
    return report_error(kDiverged, "diverged", ex.what());
  } catch (const GenerationError& ex) {
    return report_error(kGeneration, "generation_failed", ex.what());
  } catch (const ContractViolation& ex) {
    return report_error(kMalformed, "contract_violation", ex.what());
  } catch (const std::exception& ex) {
    return report_error(kInternal, "internal", ex.what());
  }
  return kInternal;
}
