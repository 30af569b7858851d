#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tirtrack/attention.hpp"
#include "tirtrack/config.hpp"
#include "tirtrack/coord_vocab.hpp"
#include "tirtrack/ops.hpp"
#include "tirtrack/param_store.hpp"

namespace tirtrack {

/// Length of the decoder input [cmd, x, y, w, h].
inline constexpr std::size_t kSequenceLength = 5;

struct DecoderConfig {
  std::size_t layers = 2;
  std::size_t hidden = 256;
  std::size_t heads = 8;
  std::size_t mlp_ratio = 4;
  std::size_t memory_dim = 768;  // encoder width bridged down to `hidden`

  static DecoderConfig from(const ModelConfig& c) {
    return {c.dec_layers, c.dec_hidden, c.dec_heads, 4, c.embed_dim};
  }
};

/// Upper-triangular additive mask: 0 on and below the diagonal, masked above.
inline Tensor causal_mask(std::size_t t) {
  if (t == 0) contract_fail("causal_mask: length must be >= 1");
  Tensor m({t, t});
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = i + 1; j < t; ++j) m.at(i, j) = kMaskedScore;
  return m;
}

inline std::string dec_layer_prefix(std::size_t i) { return "dec.layer" + std::to_string(i); }

inline void init_decoder_params(ParamStore& store, const DecoderConfig& cfg,
                                const CoordVocab& vocab, Initializer& init) {
  const std::size_t d = cfg.hidden;
  add_linear_params(store, "dec.bridge", cfg.memory_dim, d, init);
  store.add("dec.embed", init.trunc_normal({vocab.embed_rows(), d}, 0.02));
  store.add("dec.pos", init.trunc_normal({kSequenceLength, d}, 0.02));
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    const std::string p = dec_layer_prefix(i);
    add_norm_params(store, p + ".norm1", d);
    add_linear_params(store, p + ".self_qkv", d, 3 * d, init);
    add_linear_params(store, p + ".self_proj", d, d, init);
    add_norm_params(store, p + ".norm2", d);
    add_linear_params(store, p + ".cross_q", d, d, init);
    add_linear_params(store, p + ".cross_kv", d, 2 * d, init);
    add_linear_params(store, p + ".cross_proj", d, d, init);
    add_norm_params(store, p + ".norm3", d);
    add_linear_params(store, p + ".mlp1", d, d * cfg.mlp_ratio, init);
    add_linear_params(store, p + ".mlp2", d * cfg.mlp_ratio, d, init);
  }
  add_norm_params(store, "dec.norm", d);
  add_linear_params(store, "dec.head.1", d, d, init);
  add_linear_params(store, "dec.head.2", d, d, init);
  add_linear_params(store, "dec.head.3", d, vocab.head_rows(), init);
}

/// Fixed 2-D sinusoidal code [rows·cols × dim] over a row-major grid: the
/// first half of the channels encodes the row, the second half the column.
inline Tensor grid_position_table(std::size_t rows, std::size_t cols, std::size_t dim) {
  if (dim % 4 != 0) contract_fail("grid_position_table: dim ", dim, " not divisible by 4");
  const std::size_t half = dim / 2;
  Tensor t({rows * cols, dim});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      for (std::size_t i = 0; i < half; i += 2) {
        const double freq = std::pow(10000.0, -double(i) / double(half));
        const std::size_t n = r * cols + c;
        t.at(n, i) = std::sin(double(r) * freq);
        t.at(n, i + 1) = std::cos(double(r) * freq);
        t.at(n, half + i) = std::sin(double(c) * freq);
        t.at(n, half + i + 1) = std::cos(double(c) * freq);
      }
  return t;
}

/// Projects fused search features [rows·cols × C_enc] to decoder width and
/// adds the grid position code, so cross-attention can read out locations.
inline Var bridge_memory(const Var& features, std::size_t rows, std::size_t cols,
                         const ParamStore& store) {
  if (features.extent(0) != rows * cols) {
    contract_fail("bridge_memory: ", features.extent(0), " tokens for a ", rows, "x", cols, " grid");
  }
  Var m = apply_linear(store, "dec.bridge", features);
  return add_constant(m, grid_position_table(rows, cols, m.extent(1)));
}

/// Masked self-attention, cross-attention into `memory`, feed-forward; each
/// sub-block pre-normed with a residual connection.
inline Var decoder_layer(const Var& x, const Var& memory, const ParamStore& store,
                         std::size_t layer, std::size_t heads) {
  if (x.extent(1) != memory.extent(1)) {
    contract_fail("decoder_layer: token width ", x.extent(1), " vs memory width ",
                  memory.extent(1));
  }
  const std::string p = dec_layer_prefix(layer);
  const std::size_t t = x.extent(0), d = x.extent(1);

  Var qkv = apply_linear(store, p + ".self_qkv", apply_norm(store, p + ".norm1", x));
  const Tensor mask = causal_mask(t);
  Var sa = multi_head_attention(slice(qkv, 1, 0, d), slice(qkv, 1, d, 2 * d),
                                slice(qkv, 1, 2 * d, 3 * d), heads, &mask);
  Var a = add(apply_linear(store, p + ".self_proj", sa), x);

  Var q = apply_linear(store, p + ".cross_q", apply_norm(store, p + ".norm2", a));
  Var kv = apply_linear(store, p + ".cross_kv", memory);
  Var ca = multi_head_attention(q, slice(kv, 1, 0, d), slice(kv, 1, d, 2 * d), heads);
  Var b = add(apply_linear(store, p + ".cross_proj", ca), a);

  Var hidden = gelu(apply_linear(store, p + ".mlp1", apply_norm(store, p + ".norm3", b)));
  return add(apply_linear(store, p + ".mlp2", hidden), b);
}

/// Logits [T×(nbins+1)] for every prefix position of `tokens`.
inline Var decoder_forward(const Var& memory, const std::vector<Token>& tokens,
                           const CoordVocab& vocab, const DecoderConfig& cfg,
                           const ParamStore& store) {
  if (tokens.empty() || tokens.size() > kSequenceLength) {
    contract_fail("decoder: sequence length ", tokens.size(), " outside [1, ", kSequenceLength, "]");
  }
  std::vector<std::size_t> rows;
  for (Token t : tokens) rows.push_back(vocab.embed_row(t));
  Var x = embedding(store.get("dec.embed"), rows);
  x = add(x, slice(store.get("dec.pos"), 0, 0, tokens.size()));
  for (std::size_t i = 0; i < cfg.layers; ++i) x = decoder_layer(x, memory, store, i, cfg.heads);
  x = apply_norm(store, "dec.norm", x);
  x = gelu(apply_linear(store, "dec.head.1", x));
  x = gelu(apply_linear(store, "dec.head.2", x));
  return apply_linear(store, "dec.head.3", x);
}

/// One parallel pass over [cmd, x, y, w, h] giving logits for [x, y, w, h, end].
inline Var teacher_forcing_logits(const Var& memory, const std::array<Token, 5>& input,
                                  const CoordVocab& vocab, const DecoderConfig& cfg,
                                  const ParamStore& store) {
  if (input[0] != vocab.cmd_token()) contract_fail("teacher forcing: input must start with cmd");
  return decoder_forward(memory, {input.begin(), input.end()}, vocab, cfg, store);
}

/// Logits of the next token after `prefix`.
inline Tensor decode_step(const Var& memory, const std::vector<Token>& prefix,
                          const CoordVocab& vocab, const DecoderConfig& cfg,
                          const ParamStore& store) {
  Var logits = decoder_forward(memory, prefix, vocab, cfg, store);
  return slice(logits, 0, prefix.size() - 1, prefix.size()).value().reshaped({logits.extent(1)});
}

struct DecodeResult {
  std::array<Token, 4> tokens{};
  std::array<double, 4> scores{};
};

/// Next-token logits given the prefix so far (starting with cmd).
using StepFunction = std::function<Tensor(const std::vector<Token>&)>;

/// Four greedy steps from [cmd]. Each step takes the argmax over coordinate
/// rows only (lowest token wins ties) and records the softmax probability of
/// the chosen row, normalized over those rows.
inline DecodeResult greedy_decode(const StepFunction& step, const CoordVocab& vocab) {
  DecodeResult out;
  std::vector<Token> prefix{vocab.cmd_token()};
  const std::size_t nb = vocab.nbins();
  for (std::size_t s = 0; s < 4; ++s) {
    const Tensor logits = step(prefix);
    if (logits.numel() < nb) contract_fail("greedy_decode: step returned ", logits.numel(), " logits");
    auto l = logits.data();
    std::size_t best = 0;
    for (std::size_t r = 1; r < nb; ++r)
      if (l[r] > l[best]) best = r;
    double z = 0.0;
    for (std::size_t r = 0; r < nb; ++r) z += std::exp(l[r] - l[best]);
    out.tokens[s] = vocab.token_of_head_row(best);
    out.scores[s] = 1.0 / z;
    prefix.push_back(out.tokens[s]);
  }
  return out;
}

inline DecodeResult greedy_decode(const Var& memory, const CoordVocab& vocab,
                                  const DecoderConfig& cfg, const ParamStore& store) {
  return greedy_decode(
      [&](const std::vector<Token>& prefix) { return decode_step(memory, prefix, vocab, cfg, store); },
      vocab);
}

}  // namespace tirtrack
