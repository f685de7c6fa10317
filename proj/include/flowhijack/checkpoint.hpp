// Binary checkpoint container.
//
// Layout: 8-byte magic "FHCK0001", u64 tensor count, then per tensor:
// u64 name length, name bytes, u64 rank, u64 dims..., f64 values...
// All integers and floats little-endian. Round-trips are bit-exact.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "flowhijack/tensor.hpp"

namespace flowhijack {

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t x) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return x;
}

inline void put_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(os, bits);
}

inline double get_f64(std::istream& is) {
  std::uint64_t bits = get_u64(is);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[9] = "FHCK0001";

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline void save_checkpoint(const std::string& path, const NamedTensors& ts) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path);
  os.write(kCheckpointMagic, 8);
  detail::put_u64(os, ts.size());
  for (const auto& [name, t] : ts) {
    detail::put_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u64(os, t.rank());
    for (std::size_t d : t.shape) detail::put_u64(os, d);
    for (double x : t.v) detail::put_f64(os, x);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline NamedTensors load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  std::uint64_t count = detail::get_u64(is);
  NamedTensors out;
  out.reserve(count);
  for (std::uint64_t k = 0; k < count; ++k) {
    std::uint64_t name_len = detail::get_u64(is);
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    std::uint64_t rank = detail::get_u64(is);
    std::vector<std::size_t> shape(rank);
    for (std::uint64_t i = 0; i < rank; ++i)
      shape[i] = static_cast<std::size_t>(detail::get_u64(is));
    Tensor t = Tensor::zeros(shape);
    for (double& x : t.v) x = detail::get_f64(is);
    if (!is) throw std::runtime_error("checkpoint: truncated tensor " + name);
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace flowhijack
