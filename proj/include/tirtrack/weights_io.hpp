#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tirtrack/param_store.hpp"
#include "tirtrack/tensor.hpp"

// Weights file layout (all integers little-endian):
//   "NLMW" | version u32 | entry count u32
//   per entry: name length u16 | UTF-8 name | rank u8 | extents u64 × rank |
//              float64 payload (IEEE-754 bit patterns, little-endian)

namespace tirtrack {

class WeightsFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::array<char, 4> kWeightsMagic{'N', 'L', 'M', 'W'};
inline constexpr std::uint32_t kWeightsVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

namespace detail {

template <typename U>
void put_le(std::ostream& os, U value) {
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(value >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get_le(std::istream& is) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) {
    throw WeightsFormatError("weights: unexpected end of file");
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= U(buf[i]) << (8 * i);
  return value;
}

}  // namespace detail

inline void write_weights(std::ostream& os, const NamedTensors& entries) {
  os.write(kWeightsMagic.data(), kWeightsMagic.size());
  detail::put_le<std::uint32_t>(os, kWeightsVersion);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    if (name.size() > 0xFFFF) contract_fail("weights: name too long: ", name);
    if (t.rank() > 0xFF) contract_fail("weights: rank too large for ", name);
    detail::put_le<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t e : t.shape()) detail::put_le<std::uint64_t>(os, e);
    for (double v : t.data()) detail::put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  }
}

inline NamedTensors read_weights(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kWeightsMagic) {
    throw WeightsFormatError("weights: bad magic");
  }
  const auto version = detail::get_le<std::uint32_t>(is);
  if (version != kWeightsVersion) {
    throw WeightsFormatError("weights: unsupported version " + std::to_string(version));
  }
  const auto count = detail::get_le<std::uint32_t>(is);
  NamedTensors out;
  out.reserve(std::min<std::uint32_t>(count, 4096));
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = detail::get_le<std::uint16_t>(is);
    std::string name(len, '\0');
    if (len && !is.read(name.data(), len)) throw WeightsFormatError("weights: truncated name");
    const auto rank = detail::get_le<std::uint8_t>(is);
    Shape shape(rank);
    for (auto& e : shape) {
      const auto v = detail::get_le<std::uint64_t>(is);
      if (v == 0 || v > (std::uint64_t(1) << 40)) {
        throw WeightsFormatError("weights: bad extent for " + name);
      }
      e = static_cast<std::size_t>(v);
    }
    std::vector<double> data(rank == 0 ? 1 : shape_numel(shape));
    for (double& v : data) v = std::bit_cast<double>(detail::get_le<std::uint64_t>(is));
    if (rank == 0) shape = {1};
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

inline NamedTensors store_entries(const ParamStore& store) {
  NamedTensors out;
  for (const auto& [name, e] : store.entries()) out.emplace_back(name, e.var.value());
  return out;
}

inline void save_weights(const std::string& path, const NamedTensors& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("weights: cannot open for writing: " + path);
  write_weights(os, entries);
  if (!os) throw std::runtime_error("weights: write failed: " + path);
}

inline NamedTensors load_weights(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("weights: cannot open: " + path);
  return read_weights(is);
}

}  // namespace tirtrack
