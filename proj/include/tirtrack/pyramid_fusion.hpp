#pragma once

#include <string>
#include <vector>

#include "tirtrack/config.hpp"
#include "tirtrack/ops.hpp"
#include "tirtrack/param_store.hpp"

namespace tirtrack {

/// Three levels ordered fine → coarse: {2×, 1×, 0.5×} of the input grid.
struct FeaturePyramid {
  std::vector<Var> levels;

  const Var& fine() const { return levels.at(0); }
  const Var& mid() const { return levels.at(1); }
  const Var& coarse() const { return levels.at(2); }
};

/// [N×C] tokens (row-major grid) → [C×rows×cols] map.
inline Var tokens_to_map(const Var& tokens, std::size_t rows, std::size_t cols) {
  if (tokens.extent(0) != rows * cols) {
    contract_fail("tokens_to_map: ", tokens.extent(0), " tokens for a ", rows, "x", cols, " grid");
  }
  const std::size_t c = tokens.extent(1);
  return reshape(transpose(tokens), {c, rows, cols});
}

/// [C×H×W] map → [HW×C] tokens.
inline Var map_to_tokens(const Var& map) {
  const std::size_t c = map.extent(0), hw = map.extent(1) * map.extent(2);
  return transpose(reshape(map, {c, hw}));
}

namespace detail {

inline void add_conv_params(ParamStore& store, const std::string& prefix, std::size_t cin,
                            std::size_t cout, std::size_t k, Initializer& init, bool bias = true) {
  const double stddev = std::sqrt(1.0 / double(cin * k * k));
  store.add(prefix + ".w", init.trunc_normal({cout, cin, k, k}, stddev));
  if (bias) store.add(prefix + ".b", Tensor::zeros({cout}));
}

inline Var apply_conv(const ParamStore& store, const std::string& prefix, const Var& x,
                      std::size_t pad = 0) {
  return conv2d(x, store.get(prefix + ".w"), store.get_or_undefined(prefix + ".b"), 1, pad);
}

/// 1×1 (2C→C), 3×3 pad 1 (C→C), 1×1 (C→C).
inline void add_fusion_block_params(ParamStore& store, const std::string& prefix, std::size_t c,
                                    Initializer& init) {
  add_conv_params(store, prefix + ".c1", 2 * c, c, 1, init);
  add_conv_params(store, prefix + ".c2", c, c, 3, init);
  add_conv_params(store, prefix + ".c3", c, c, 1, init);
}

inline Var fusion_block(const ParamStore& store, const std::string& prefix, const Var& cat) {
  Var y = apply_conv(store, prefix + ".c1", cat);
  y = apply_conv(store, prefix + ".c2", y, 1);
  return apply_conv(store, prefix + ".c3", y);
}

inline void require_half(const Var& fine, const Var& coarse, const char* op) {
  if (fine.extent(0) != coarse.extent(0) || fine.extent(1) != 2 * coarse.extent(1) ||
      fine.extent(2) != 2 * coarse.extent(2)) {
    contract_fail(op, ": expected a 2:1 resolution pair with equal channels, got ",
                  shape_str(fine.shape()), " and ", shape_str(coarse.shape()));
  }
}

}  // namespace detail

inline void init_fusion_params(ParamStore& store, FusionMode mode, std::size_t c,
                               Initializer& init) {
  store.add("fus.pyr_up.w", init.trunc_normal({c, c, 2, 2}, std::sqrt(1.0 / double(c))));
  store.add("fus.pyr_up.b", Tensor::zeros({c}));
  switch (mode) {
    case FusionMode::kMpfm:
      detail::add_fusion_block_params(store, "fus.up1", c, init);
      detail::add_fusion_block_params(store, "fus.up2", c, init);
      detail::add_fusion_block_params(store, "fus.down", c, init);
      break;
    case FusionMode::kConf:
      detail::add_conv_params(store, "fus.conf.proj", 3 * c, c, 1, init);
      break;
    case FusionMode::kAddf:
      for (int l = 0; l < 3; ++l)
        detail::add_conv_params(store, "fus.addf.proj" + std::to_string(l), c, c, 1, init, false);
      break;
  }
}

/// 2× level by stride-2 transposed convolution, 1× identity, 0.5× by 2×2 max pool.
inline FeaturePyramid build_pyramid(const Var& fmap, const ParamStore& store) {
  if (fmap.shape().size() != 3) {
    contract_fail("build_pyramid: expected [C×H×W], got ", shape_str(fmap.shape()));
  }
  if (fmap.extent(1) % 2 != 0 || fmap.extent(2) % 2 != 0) {
    contract_fail("build_pyramid: odd extent at pooled level ", shape_str(fmap.shape()));
  }
  Var up = conv_transpose2d(fmap, store.get("fus.pyr_up.w"), store.get("fus.pyr_up.b"), 2);
  return {{up, fmap, max_pool2x2(fmap)}};
}

/// Concat(F_h, upsample(F_l)) → conv stack, at F_h's resolution.
inline Var up_fusion(const Var& high_res, const Var& low_res, const ParamStore& store,
                     const std::string& prefix) {
  detail::require_half(high_res, low_res, "up_fusion");
  return detail::fusion_block(store, prefix, concat({high_res, upsample_bilinear2x(low_res)}, 0));
}

/// Concat(maxpool(F_l), F_h) → conv stack, at F_h's (coarser) resolution.
inline Var down_fusion(const Var& high_res, const Var& low_res, const ParamStore& store,
                       const std::string& prefix) {
  detail::require_half(high_res, low_res, "down_fusion");
  return detail::fusion_block(store, prefix, concat({max_pool2x2(high_res), low_res}, 0));
}

/// Top-down 0.5× → 1× → 2×, then bottom-up 2× → 1×. Output matches input shape.
inline Var mpfm(const Var& fmap, const ParamStore& store) {
  const FeaturePyramid pyr = build_pyramid(fmap, store);
  Var mid = up_fusion(pyr.mid(), pyr.coarse(), store, "fus.up1");
  Var fine = up_fusion(pyr.fine(), mid, store, "fus.up2");
  return down_fusion(fine, mid, store, "fus.down");
}

/// Every level resized to the 1× grid, concatenated, 1×1 conv back to C.
inline Var conf_fusion(const FeaturePyramid& pyr, const ParamStore& store) {
  Var cat = concat({max_pool2x2(pyr.fine()), pyr.mid(), upsample_bilinear2x(pyr.coarse())}, 0);
  return detail::apply_conv(store, "fus.conf.proj", cat);
}

/// Every level resized to the 1× grid, projected by its own 1×1 conv, summed.
inline Var addf_fusion(const FeaturePyramid& pyr, const ParamStore& store) {
  Var a = detail::apply_conv(store, "fus.addf.proj0", max_pool2x2(pyr.fine()));
  Var b = detail::apply_conv(store, "fus.addf.proj1", pyr.mid());
  Var c = detail::apply_conv(store, "fus.addf.proj2", upsample_bilinear2x(pyr.coarse()));
  return add(add(a, b), c);
}

inline Var fuse(const Var& fmap, FusionMode mode, const ParamStore& store) {
  switch (mode) {
    case FusionMode::kMpfm: return mpfm(fmap, store);
    case FusionMode::kConf: return conf_fusion(build_pyramid(fmap, store), store);
    case FusionMode::kAddf: return addf_fusion(build_pyramid(fmap, store), store);
  }
  return mpfm(fmap, store);
}

}  // namespace tirtrack
