#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <utility>

#include "tirtrack/config.hpp"
#include "tirtrack/coord_vocab.hpp"
#include "tirtrack/decoder.hpp"
#include "tirtrack/encoder.hpp"
#include "tirtrack/objective.hpp"
#include "tirtrack/param_store.hpp"
#include "tirtrack/pyramid_fusion.hpp"
#include "tirtrack/weights_io.hpp"

namespace tirtrack {

/// One teacher-forcing example: two templates, a search crop and the target
/// box normalized to the search crop.
struct TrainingSample {
  Tensor fixed_template;
  Tensor dynamic_template;
  Tensor search;
  BBox target;
};

/// Encoder → fusion → decoder with its parameters.
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), vocab_(cfg.nbins) {
    cfg_.validate();
    Initializer init(seed);
    init_encoder_params(params_, EncoderConfig::from(cfg_), cfg_.template_size,
                        cfg_.search_size, init);
    init_fusion_params(params_, cfg_.fusion, cfg_.embed_dim, init);
    init_decoder_params(params_, DecoderConfig::from(cfg_), vocab_, init);
  }

  Model(const Model& other)
      : cfg_(other.cfg_), vocab_(other.vocab_), params_(other.params_.clone()) {}
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  Model& operator=(const Model& other) {
    if (this != &other) *this = Model(other);
    return *this;
  }

  /// Rebuilds a model from a weights file. Architecture is read from the
  /// `meta.*` entries; `fusion` may override the stored mode only if the
  /// matching fusion parameters are present.
  static Model from_weights(const NamedTensors& entries,
                            std::optional<FusionMode> fusion = std::nullopt) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : entries) by_name[name] = &t;
    ModelConfig cfg = ModelConfig::full();
    auto meta = [&](const std::string& key) -> double {
      auto it = by_name.find("meta." + key);
      if (it == by_name.end()) throw WeightsFormatError("weights: missing meta." + key);
      return (*it->second)[0];
    };
    for (const auto& [key, member] : size_fields()) cfg.*member = std::size_t(meta(key));
    for (const auto& [key, member] : real_fields()) cfg.*member = meta(key);
    cfg.fusion = static_cast<FusionMode>(int(meta("fusion")));
    if (fusion) cfg.fusion = *fusion;

    Model m(cfg, 0);
    for (const std::string& name : m.params_.names()) {
      auto it = by_name.find(name);
      if (it == by_name.end()) {
        throw WeightsFormatError("weights: missing parameter " + name + " (fusion mode " +
                                 fusion_name(cfg.fusion) + ")");
      }
      if (it->second->shape() != m.params_.get(name).shape()) {
        throw WeightsFormatError("weights: shape mismatch for " + name);
      }
      m.params_.assign(name, *it->second);
    }
    return m;
  }

  NamedTensors to_weights() const {
    NamedTensors out = store_entries(params_);
    for (const auto& [key, member] : size_fields())
      out.emplace_back(std::string("meta.") + key, Tensor::scalar(double(cfg_.*member)));
    for (const auto& [key, member] : real_fields())
      out.emplace_back(std::string("meta.") + key, Tensor::scalar(cfg_.*member));
    out.emplace_back("meta.fusion", Tensor::scalar(double(int(cfg_.fusion))));
    return out;
  }

  const ModelConfig& config() const { return cfg_; }
  const CoordVocab& vocab() const { return vocab_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  EncoderConfig encoder_config() const { return EncoderConfig::from(cfg_); }
  DecoderConfig decoder_config() const { return DecoderConfig::from(cfg_); }

  /// Fused, bridged search features: the decoder's cross-attention memory.
  Var memory(const Tensor& fixed_template, const Tensor& dynamic_template,
             const Tensor& search) const {
    Var fx = encode(fixed_template, dynamic_template, search, encoder_config(), params_);
    const std::size_t g = cfg_.search_grid();
    Var fused = fuse(tokens_to_map(fx, g, g), cfg_.fusion, params_);
    return bridge_memory(map_to_tokens(fused), g, g, params_);
  }

  Var teacher_forcing_logits(const TrainingSample& s) const {
    return tirtrack::teacher_forcing_logits(
        memory(s.fixed_template, s.dynamic_template, s.search), vocab_.encode_box(clamped(s.target)),
        vocab_, decoder_config(), params_);
  }

  LossReport loss(const TrainingSample& s) const {
    const BBox target = clamped(s.target);
    return total_loss(teacher_forcing_logits(s), vocab_.target_sequence(target), target, vocab_);
  }

  DecodeResult predict(const Tensor& fixed_template, const Tensor& dynamic_template,
                       const Tensor& search) const {
    NoGradGuard no_grad;
    Var mem = memory(fixed_template, dynamic_template, search);
    return greedy_decode(mem, vocab_, decoder_config(), params_);
  }

  /// Normalized targets can poke outside the crop; clamp into [0, 1] with a
  /// positive extent.
  BBox clamped(const BBox& b) const {
    const double lo = 1.0 / double(vocab_.nbins());
    auto c = [](double v) { return std::clamp(v, 0.0, 1.0); };
    return {c(b.x), c(b.y), std::clamp(b.w, lo, 1.0), std::clamp(b.h, lo, 1.0),
            BoxFrame::kNormalized};
  }

 private:
  using SizeField = std::pair<const char*, std::size_t ModelConfig::*>;
  using RealField = std::pair<const char*, double ModelConfig::*>;

  static std::array<SizeField, 12> size_fields() {
    return {{{"nbins", &ModelConfig::nbins},
             {"enc_layers", &ModelConfig::enc_layers},
             {"patch", &ModelConfig::patch},
             {"embed_dim", &ModelConfig::embed_dim},
             {"enc_heads", &ModelConfig::enc_heads},
             {"mlp_ratio", &ModelConfig::mlp_ratio},
             {"dec_layers", &ModelConfig::dec_layers},
             {"dec_hidden", &ModelConfig::dec_hidden},
             {"dec_heads", &ModelConfig::dec_heads},
             {"template_size", &ModelConfig::template_size},
             {"search_size", &ModelConfig::search_size},
             {"zu", &ModelConfig::zu}}};
  }
  static std::array<RealField, 3> real_fields() {
    return {{{"template_factor", &ModelConfig::template_factor},
             {"search_factor", &ModelConfig::search_factor},
             {"lambda", &ModelConfig::lambda}}};
  }

  ModelConfig cfg_;
  CoordVocab vocab_;
  ParamStore params_;
};

}  // namespace tirtrack
