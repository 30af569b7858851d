#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "tirtrack/tensor.hpp"

namespace tirtrack {

enum class BoxFrame { kImagePx, kCropPx, kNormalized };

/// Axis-aligned box: top-left corner plus extents, tagged with its frame.
struct BBox {
  double x = 0, y = 0, w = 0, h = 0;
  BoxFrame frame = BoxFrame::kImagePx;

  double cx() const { return x + 0.5 * w; }
  double cy() const { return y + 0.5 * h; }
  double area() const { return w * h; }
  bool valid() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(w) &&
           std::isfinite(h) && w > 0 && h > 0;
  }
};

/// The decoder produced a special token where a coordinate was expected.
class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Token = std::size_t;

/// Shared vocabulary. Coordinate tokens are 1..nbins, `end` is nbins+1 and
/// `cmd` is nbins+2. The prediction head has nbins+1 rows (bins then end);
/// the input embedding table has nbins+2 rows (bins, end, cmd).
class CoordVocab {
 public:
  explicit CoordVocab(std::size_t nbins = 4000) : nbins_(nbins) {
    if (nbins == 0) contract_fail("vocab: nbins must be positive");
  }

  std::size_t nbins() const { return nbins_; }
  Token end_token() const { return nbins_ + 1; }
  Token cmd_token() const { return nbins_ + 2; }
  bool is_coord(Token t) const { return t >= 1 && t <= nbins_; }

  std::size_t head_rows() const { return nbins_ + 1; }
  std::size_t embed_rows() const { return nbins_ + 2; }

  /// Head row predicting `t` (coordinate or end).
  std::size_t head_row(Token t) const {
    if (is_coord(t)) return t - 1;
    if (t == end_token()) return nbins_;
    contract_fail("vocab: token ", t, " has no head row");
  }
  Token token_of_head_row(std::size_t row) const {
    if (row > nbins_) contract_fail("vocab: head row ", row, " out of range");
    return row + 1;
  }
  std::size_t embed_row(Token t) const {
    if (t == cmd_token()) return nbins_ + 1;
    return head_row(t);
  }

  Token quantize(double v) const {
    if (std::isnan(v)) contract_fail("quantize: NaN input");
    v = std::clamp(v, 0.0, 1.0);
    const double bin = std::floor(v * double(nbins_)) + 1.0;
    return static_cast<Token>(std::clamp(bin, 1.0, double(nbins_)));
  }

  /// Bin centre.
  double dequantize(Token t) const {
    if (!is_coord(t)) contract_fail("dequantize: token ", t, " outside [1, ", nbins_, "]");
    return (double(t) - 0.5) / double(nbins_);
  }

  /// [cmd, x, y, w, h]
  std::array<Token, 5> encode_box(const BBox& b) const {
    require_normalized(b);
    return {cmd_token(), quantize(b.x), quantize(b.y), quantize(b.w), quantize(b.h)};
  }

  /// Teacher-forcing target [x, y, w, h, end].
  std::array<Token, 5> target_sequence(const BBox& b) const {
    require_normalized(b);
    return {quantize(b.x), quantize(b.y), quantize(b.w), quantize(b.h), end_token()};
  }

  BBox decode_tokens(const std::vector<Token>& tokens) const {
    if (tokens.size() != 4) contract_fail("decode_tokens: need 4 tokens, got ", tokens.size());
    for (Token t : tokens) {
      if (t == cmd_token() || t == end_token()) {
        throw DecodeError("decode_tokens: special token " + std::to_string(t) +
                          " in a coordinate slot");
      }
      if (!is_coord(t)) contract_fail("decode_tokens: token ", t, " out of range");
    }
    const double min_extent = 1.0 / double(nbins_);
    return {dequantize(tokens[0]), dequantize(tokens[1]),
            std::max(dequantize(tokens[2]), min_extent),
            std::max(dequantize(tokens[3]), min_extent), BoxFrame::kNormalized};
  }

  /// Bin centres for bins 1..nbins, in head-row order.
  std::vector<double> bin_centers() const {
    std::vector<double> c(nbins_);
    for (std::size_t i = 0; i < nbins_; ++i) c[i] = dequantize(i + 1);
    return c;
  }

 private:
  static void require_normalized(const BBox& b) {
    if (b.frame != BoxFrame::kNormalized) contract_fail("encode_box: box is not normalized");
    for (double v : {b.x, b.y, b.w, b.h}) {
      if (!(v >= 0.0 && v <= 1.0)) contract_fail("encode_box: value ", v, " outside [0, 1]");
    }
  }

  std::size_t nbins_;
};

}  // namespace tirtrack
