#pragma once

#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "tirtrack/attention.hpp"
#include "tirtrack/grad_check.hpp"
#include "tirtrack/model.hpp"
#include "tirtrack/objective.hpp"
#include "tirtrack/ops.hpp"

// Central-difference checks over every differentiable op and the full
// encoder → fusion → decoder → loss pipeline.

namespace tirtrack {

struct GradSuiteEntry {
  std::string name;
  GradCheckReport report;
};

/// Model shape used for the full-pipeline check.
inline ModelConfig gradcheck_config() {
  ModelConfig c = ModelConfig::toy();
  c.enc_layers = 2;
  c.embed_dim = 64;
  c.enc_heads = 4;
  c.search_size = 64;
  c.template_size = 32;
  c.nbins = 100;
  c.dec_hidden = 64;
  return c;
}

namespace detail {

/// Reduces an op output to a scalar through a fixed random weighting, so that
/// outputs with constant sums (softmax rows, for instance) still carry signal.
class Probe {
 public:
  explicit Probe(std::uint64_t seed) : init_(seed) {}

  Tensor rand(Shape s, double lo = -1.0, double hi = 1.0) { return init_.uniform(std::move(s), lo, hi); }

  Var reduce(const Var& y) {
    auto it = weights_.find(y.numel());
    if (it == weights_.end()) it = weights_.emplace(y.numel(), rand({y.numel()})).first;
    return sum(mul(reshape(y, {y.numel()}), Var::constant(it->second)));
  }

 private:
  Initializer init_;
  std::map<std::size_t, Tensor> weights_;
};

using StoreFn = std::function<Var(ParamStore&)>;

struct OpCase {
  std::string name;
  ParamStore store;
  StoreFn f;
};

inline std::vector<OpCase> op_cases(std::uint64_t seed) {
  auto probe = std::make_shared<Probe>(seed);
  Probe& p = *probe;
  std::vector<OpCase> cases;
  auto add_case = [&](std::string name, std::vector<std::pair<std::string, Tensor>> inputs,
                      std::function<Var(const ParamStore&)> op) {
    OpCase c;
    c.name = std::move(name);
    for (auto& [n, t] : inputs) c.store.add(n, std::move(t));
    c.f = [probe, op](ParamStore& s) { return probe->reduce(op(s)); };
    cases.push_back(std::move(c));
  };
  auto g = [](const ParamStore& s, const char* n) { return s.get(n); };

  add_case("matmul", {{"a", p.rand({3, 4})}, {"b", p.rand({4, 5})}},
           [=](const ParamStore& s) { return matmul(g(s, "a"), g(s, "b")); });
  add_case("transpose", {{"a", p.rand({3, 4})}},
           [=](const ParamStore& s) { return transpose(g(s, "a")); });
  add_case("reshape", {{"a", p.rand({3, 4})}},
           [=](const ParamStore& s) { return reshape(g(s, "a"), {2, 6}); });
  add_case("add", {{"a", p.rand({3, 4})}, {"b", p.rand({3, 4})}},
           [=](const ParamStore& s) { return add(g(s, "a"), g(s, "b")); });
  add_case("add_bias", {{"a", p.rand({3, 4})}, {"b", p.rand({4})}},
           [=](const ParamStore& s) { return add_bias(g(s, "a"), g(s, "b")); });
  const Tensor c34 = p.rand({3, 4});
  add_case("add_constant", {{"a", p.rand({3, 4})}},
           [=](const ParamStore& s) { return add_constant(g(s, "a"), c34); });
  add_case("scale", {{"a", p.rand({3, 4})}},
           [=](const ParamStore& s) { return scale(g(s, "a"), -1.7); });
  add_case("mul", {{"a", p.rand({3, 4})}, {"b", p.rand({3, 4})}},
           [=](const ParamStore& s) { return mul(g(s, "a"), g(s, "b")); });
  add_case("gelu", {{"a", p.rand({3, 4}, -3, 3)}},
           [=](const ParamStore& s) { return gelu(g(s, "a")); });
  add_case("sum", {{"a", p.rand({3, 4})}},
           [=](const ParamStore& s) { return sum(mul(g(s, "a"), g(s, "a"))); });
  add_case("mean", {{"a", p.rand({3, 4})}},
           [=](const ParamStore& s) { return mean(mul(g(s, "a"), g(s, "a"))); });
  add_case("softmax_rows", {{"a", p.rand({3, 5}, -2, 2)}},
           [=](const ParamStore& s) { return softmax(g(s, "a"), 1); });
  add_case("softmax_cols", {{"a", p.rand({3, 5}, -2, 2)}},
           [=](const ParamStore& s) { return softmax(g(s, "a"), 0); });
  add_case("log_softmax", {{"a", p.rand({3, 5}, -2, 2)}},
           [=](const ParamStore& s) { return log_softmax(g(s, "a"), 1); });
  add_case("layer_norm", {{"a", p.rand({3, 6})}, {"g", p.rand({6}, 0.5, 1.5)}, {"b", p.rand({6})}},
           [=](const ParamStore& s) { return layer_norm(g(s, "a"), g(s, "g"), g(s, "b")); });
  add_case("concat", {{"a", p.rand({2, 3})}, {"b", p.rand({4, 3})}},
           [=](const ParamStore& s) { return concat({g(s, "a"), g(s, "b")}, 0); });
  add_case("slice", {{"a", p.rand({4, 6})}},
           [=](const ParamStore& s) { return slice(g(s, "a"), 1, 1, 4); });
  add_case("embedding", {{"t", p.rand({5, 3})}},
           [=](const ParamStore& s) { return embedding(g(s, "t"), {4, 0, 4, 2}); });
  add_case("gather_cols", {{"a", p.rand({3, 5})}},
           [=](const ParamStore& s) { return gather_cols(g(s, "a"), {2, 0, 4}); });
  add_case("conv2d_3x3", {{"x", p.rand({2, 5, 5})}, {"w", p.rand({3, 2, 3, 3})}, {"b", p.rand({3})}},
           [=](const ParamStore& s) { return conv2d(g(s, "x"), g(s, "w"), g(s, "b"), 1, 1); });
  add_case("conv2d_stride2", {{"x", p.rand({2, 7, 7})}, {"w", p.rand({3, 2, 3, 3})}},
           [=](const ParamStore& s) { return conv2d(g(s, "x"), g(s, "w"), Var{}, 2, 0); });
  add_case("conv2d_1x1", {{"x", p.rand({3, 4, 4})}, {"w", p.rand({2, 3, 1, 1})}, {"b", p.rand({2})}},
           [=](const ParamStore& s) { return conv2d(g(s, "x"), g(s, "w"), g(s, "b"), 1, 0); });
  add_case("conv_transpose2d",
           {{"x", p.rand({2, 3, 3})}, {"w", p.rand({2, 3, 2, 2})}, {"b", p.rand({3})}},
           [=](const ParamStore& s) { return conv_transpose2d(g(s, "x"), g(s, "w"), g(s, "b"), 2); });
  add_case("max_pool2x2", {{"x", p.rand({2, 4, 4})}},
           [=](const ParamStore& s) { return max_pool2x2(g(s, "x")); });
  add_case("upsample_bilinear2x", {{"x", p.rand({2, 3, 3})}},
           [=](const ParamStore& s) { return upsample_bilinear2x(g(s, "x")); });
  add_case("linear", {{"x", p.rand({3, 4})}, {"w", p.rand({4, 2})}, {"b", p.rand({2})}},
           [=](const ParamStore& s) { return linear(g(s, "x"), g(s, "w"), g(s, "b")); });
  Tensor mask({3, 4});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = i + 2; j < 4; ++j) mask.at(i, j) = kMaskedScore;
  add_case("attention_masked",
           {{"q", p.rand({3, 8})}, {"k", p.rand({4, 8})}, {"v", p.rand({4, 8})}},
           [=](const ParamStore& s) {
             return multi_head_attention(g(s, "q"), g(s, "k"), g(s, "v"), 2, &mask);
           });

  const CoordVocab vocab(20);
  const BBox gt{0.3, 0.35, 0.2, 0.25, BoxFrame::kNormalized};
  add_case("siou_loss", {{"p", Tensor({4}, {0.27, 0.41, 0.3, 0.22})}},
           [=](const ParamStore& s) { return siou_loss(g(s, "p"), gt); });
  add_case("ce_loss", {{"l", p.rand({5, vocab.head_rows()}, -2, 2)}},
           [=](const ParamStore& s) {
             return ce_loss(g(s, "l"), {3, 7, 5, 6, vocab.end_token()}, vocab);
           });
  add_case("soft_box", {{"l", p.rand({4, vocab.head_rows()}, -2, 2)}},
           [=](const ParamStore& s) { return soft_box(g(s, "l"), vocab); });
  add_case("total_loss", {{"l", p.rand({5, vocab.head_rows()}, -2, 2)}},
           [=](const ParamStore& s) {
             return total_loss(g(s, "l"), vocab.target_sequence(gt), gt, vocab).total;
           });
  return cases;
}

inline TrainingSample random_sample(const ModelConfig& cfg, std::uint64_t seed) {
  Initializer init(seed);
  TrainingSample s;
  s.fixed_template = init.uniform({1, cfg.template_size, cfg.template_size}, 0, 1);
  s.dynamic_template = init.uniform({1, cfg.template_size, cfg.template_size}, 0, 1);
  s.search = init.uniform({1, cfg.search_size, cfg.search_size}, 0, 1);
  s.target = {0.38, 0.41, 0.22, 0.19, BoxFrame::kNormalized};
  return s;
}

}  // namespace detail

/// Runs every op check, then the full pipeline for each fusion mode.
inline std::vector<GradSuiteEntry> run_grad_suite(const GradCheckOptions& opt,
                                                  bool include_pipeline = true) {
  std::vector<GradSuiteEntry> out;
  for (auto& c : detail::op_cases(opt.seed)) {
    GradCheckOptions o = opt;
    o.coords_per_param = std::max<std::size_t>(opt.coords_per_param, 64);
    out.push_back({"op/" + c.name, grad_check(c.f, c.store, o)});
  }
  if (!include_pipeline) return out;
  for (FusionMode mode : {FusionMode::kMpfm, FusionMode::kConf, FusionMode::kAddf}) {
    ModelConfig cfg = gradcheck_config();
    cfg.fusion = mode;
    Model model(cfg, opt.seed + 1);
    const TrainingSample sample = detail::random_sample(cfg, opt.seed + 2);
    auto f = [&](ParamStore&) { return model.loss(sample).total; };
    out.push_back({std::string("pipeline/") + fusion_name(mode), grad_check(f, model.params(), opt)});
  }
  return out;
}

}  // namespace tirtrack
