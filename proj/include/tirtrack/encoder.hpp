#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "tirtrack/attention.hpp"
#include "tirtrack/config.hpp"
#include "tirtrack/ops.hpp"
#include "tirtrack/param_store.hpp"

// Joint feature-extraction/fusion encoder. Template and search patches are
// embedded separately, then a stack of pre-norm layers lets template tokens
// attend among themselves while search tokens attend to templates and search.

namespace tirtrack {

struct EncoderConfig {
  std::size_t layers = 12;
  std::size_t patch = 16;
  std::size_t embed_dim = 768;
  std::size_t heads = 12;
  std::size_t mlp_ratio = 4;

  static EncoderConfig from(const ModelConfig& c) {
    return {c.enc_layers, c.patch, c.embed_dim, c.enc_heads, c.mlp_ratio};
  }
};

enum class PatchOrigin { kTemplateFixed, kTemplateDynamic, kSearch };

struct PatchSequence {
  Var tokens;  // [N×C]
  PatchOrigin origin = PatchOrigin::kSearch;
  std::size_t rows = 0, cols = 0;
};

/// Fixed 1-D sinusoidal table [n×dim]: even channels sin, odd channels cos.
inline Tensor sinusoidal_table(std::size_t n, std::size_t dim) {
  Tensor t({n, dim});
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t i = 0; i < dim; i += 2) {
      const double freq = std::pow(10000.0, -double(i) / double(dim));
      t.at(p, i) = std::sin(double(p) * freq);
      if (i + 1 < dim) t.at(p, i + 1) = std::cos(double(p) * freq);
    }
  }
  return t;
}

inline std::string enc_layer_prefix(std::size_t i) {
  return "enc.layer" + std::to_string(i);
}

inline void init_encoder_params(ParamStore& store, const EncoderConfig& cfg,
                                std::size_t template_size, std::size_t search_size,
                                Initializer& init) {
  const std::size_t c = cfg.embed_dim;
  const double patch_std = 1.0 / double(cfg.patch);
  store.add("enc.patch_embed.w", init.trunc_normal({c, 1, cfg.patch, cfg.patch}, patch_std));
  store.add("enc.patch_embed.b", Tensor::zeros({c}));
  const std::size_t nz = (template_size / cfg.patch) * (template_size / cfg.patch);
  const std::size_t nx = (search_size / cfg.patch) * (search_size / cfg.patch);
  store.add("enc.pos_z", sinusoidal_table(nz, c), /*trainable=*/false);
  store.add("enc.pos_x", sinusoidal_table(nx, c), /*trainable=*/false);
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    const std::string p = enc_layer_prefix(i);
    add_norm_params(store, p + ".norm1", c);
    add_linear_params(store, p + ".qkv", c, 3 * c, init);
    add_linear_params(store, p + ".proj", c, c, init);
    add_norm_params(store, p + ".norm2", c);
    add_linear_params(store, p + ".mlp1", c, c * cfg.mlp_ratio, init);
    add_linear_params(store, p + ".mlp2", c * cfg.mlp_ratio, c, init);
  }
}

/// Kernel=stride=patch convolution of a single-channel image, flattened
/// row-major into [N×C].
inline PatchSequence patch_embed(const Tensor& img, const EncoderConfig& cfg,
                                 const ParamStore& store, PatchOrigin origin) {
  if (img.rank() != 3 || img.extent(0) != 1) {
    contract_fail("patch_embed: expected [1×H×W] image, got ", shape_str(img.shape()));
  }
  const std::size_t h = img.extent(1), w = img.extent(2);
  if (h % cfg.patch != 0 || w % cfg.patch != 0) {
    contract_fail("patch_embed: ", h, "x", w, " not divisible by patch ", cfg.patch);
  }
  Var fmap = conv2d(Var::constant(img), store.get("enc.patch_embed.w"),
                    store.get("enc.patch_embed.b"), cfg.patch, 0);
  const std::size_t rows = h / cfg.patch, cols = w / cfg.patch;
  Var tokens = transpose(reshape(fmap, {cfg.embed_dim, rows * cols}));
  return {tokens, origin, rows, cols};
}

/// Adds the fixed positional table once, template and search each indexed
/// from zero.
inline PatchSequence add_positional(const PatchSequence& seq, const ParamStore& store) {
  const Var& table = store.get(seq.origin == PatchOrigin::kSearch ? "enc.pos_x" : "enc.pos_z");
  if (table.shape() != seq.tokens.shape()) {
    contract_fail("add_positional: table ", shape_str(table.shape()), " vs tokens ",
                  shape_str(seq.tokens.shape()));
  }
  return {add(seq.tokens, table), seq.origin, seq.rows, seq.cols};
}

/// Additive mask for the joint layout: rows < n_template see only template
/// columns; search rows see everything.
inline Tensor joint_attention_mask(std::size_t n_template, std::size_t n_total) {
  Tensor m({n_total, n_total});
  for (std::size_t i = 0; i < n_template; ++i)
    for (std::size_t j = n_template; j < n_total; ++j) m.at(i, j) = kMaskedScore;
  return m;
}

/// One attention block over already-normalized template tokens `z` and
/// search tokens `x`: template self-attention, search cross-attention to the
/// concatenation of template and search keys/values, followed by the output
/// projection. Returns (template part, search part).
inline std::pair<Var, Var> joint_attention(const Var& z, const Var& x, const ParamStore& store,
                                           const std::string& prefix, std::size_t heads) {
  if (z.extent(1) != x.extent(1)) {
    contract_fail("joint_attention: width mismatch ", shape_str(z.shape()), " vs ",
                  shape_str(x.shape()));
  }
  const std::size_t nz = z.extent(0), n = nz + x.extent(0), c = z.extent(1);
  Var qkv = apply_linear(store, prefix + ".qkv", concat({z, x}, 0));
  Var q = slice(qkv, 1, 0, c);
  Var k = slice(qkv, 1, c, 2 * c);
  Var v = slice(qkv, 1, 2 * c, 3 * c);
  const Tensor mask = joint_attention_mask(nz, n);
  Var out = apply_linear(store, prefix + ".proj", multi_head_attention(q, k, v, heads, &mask));
  return {slice(out, 0, 0, nz), slice(out, 0, nz, n)};
}

/// A = Attn(Norm(E)) + E ; E' = MLP(Norm(A)) + A
inline Var encoder_layer(const Var& e, std::size_t n_template, const ParamStore& store,
                         std::size_t layer, std::size_t heads) {
  const std::string p = enc_layer_prefix(layer);
  const std::size_t n = e.extent(0);
  Var normed = apply_norm(store, p + ".norm1", e);
  auto [az, ax] = joint_attention(slice(normed, 0, 0, n_template), slice(normed, 0, n_template, n),
                                  store, p, heads);
  Var a = add(concat({az, ax}, 0), e);
  Var hidden = gelu(apply_linear(store, p + ".mlp1", apply_norm(store, p + ".norm2", a)));
  return add(apply_linear(store, p + ".mlp2", hidden), a);
}

struct EncoderOutput {
  Var tokens;  // full [Nz_fixed + Nz_dyn + Nx, C] sequence after the last layer
  std::size_t n_template = 0;
  std::size_t search_rows = 0, search_cols = 0;

  Var search() const { return slice(tokens, 0, n_template, tokens.extent(0)); }
};

/// Runs the layer stack on pre-embedded sequences (positional codes included).
inline EncoderOutput run_encoder_layers(const std::vector<PatchSequence>& templates,
                                        const PatchSequence& search, const EncoderConfig& cfg,
                                        const ParamStore& store) {
  std::vector<Var> parts;
  std::size_t nz = 0;
  for (const auto& t : templates) {
    parts.push_back(t.tokens);
    nz += t.tokens.extent(0);
  }
  parts.push_back(search.tokens);
  Var e = concat(parts, 0);
  for (std::size_t i = 0; i < cfg.layers; ++i) e = encoder_layer(e, nz, store, i, cfg.heads);
  return {e, nz, search.rows, search.cols};
}

inline EncoderOutput encode_full(const Tensor& fixed_template, const Tensor& dynamic_template,
                                 const Tensor& search, const EncoderConfig& cfg,
                                 const ParamStore& store) {
  auto zf = add_positional(patch_embed(fixed_template, cfg, store, PatchOrigin::kTemplateFixed), store);
  auto zd = add_positional(patch_embed(dynamic_template, cfg, store, PatchOrigin::kTemplateDynamic), store);
  auto x = add_positional(patch_embed(search, cfg, store, PatchOrigin::kSearch), store);
  return run_encoder_layers({zf, zd}, x, cfg, store);
}

/// Search-region features f_x [Nx×C].
inline Var encode(const Tensor& fixed_template, const Tensor& dynamic_template,
                  const Tensor& search, const EncoderConfig& cfg, const ParamStore& store) {
  return encode_full(fixed_template, dynamic_template, search, cfg, store).search();
}

}  // namespace tirtrack
