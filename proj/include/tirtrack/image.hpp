#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "tirtrack/tensor.hpp"

namespace tirtrack {

/// Single-channel intensity image, row-major, values nominally in [0, 255].
struct Image {
  std::size_t width = 0, height = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, double fill = 0.0)
      : width(w), height(h), pixels(w * h, fill) {}

  bool empty() const { return pixels.empty(); }
  double at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
  double& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }

  double mean() const {
    if (pixels.empty()) return 0.0;
    return std::accumulate(pixels.begin(), pixels.end(), 0.0) / double(pixels.size());
  }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Network input [1×H×W]: the crop standardized to zero mean and unit
/// variance. The spread is floored at one grey level so flat crops stay finite.
inline Tensor to_network_input(const Image& img) {
  const double m = img.mean();
  double var = 0.0;
  for (double p : img.pixels) var += (p - m) * (p - m);
  const double sd = std::max(std::sqrt(var / double(std::max<std::size_t>(img.pixels.size(), 1))), 1.0);
  std::vector<double> d(img.pixels.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = (img.pixels[i] - m) / sd;
  return Tensor({1, img.height, img.width}, std::move(d));
}

}  // namespace tirtrack
