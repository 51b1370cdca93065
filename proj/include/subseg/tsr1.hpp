#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "subseg/tensor.hpp"

namespace subseg {

// Binary tensor format "TSR1": 4-byte magic, u32 LE rank, rank x u32 LE dims,
// f32 LE row-major payload. Checkpoints, datasets and debug dumps all use it.

namespace detail {
inline void put_u32le(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32le(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error("tsr1: truncated file " + path);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

static_assert(sizeof(float) == 4, "tsr1 assumes 32-bit IEEE floats");
}  // namespace detail

inline void save_tsr1(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("tsr1: cannot open for write: " + path);
  os.write("TSR1", 4);
  detail::put_u32le(os, static_cast<uint32_t>(t.rank()));
  for (int d : t.shape) detail::put_u32le(os, static_cast<uint32_t>(d));
  for (float v : t.data) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    detail::put_u32le(os, bits);
  }
  if (!os) throw std::runtime_error("tsr1: write failed: " + path);
}

inline Tensor load_tsr1(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("tsr1: cannot open: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "TSR1", 4) != 0)
    throw std::runtime_error("tsr1: bad magic in " + path);
  const uint32_t rank = detail::get_u32le(is, path);
  if (rank > 8) throw std::runtime_error("tsr1: implausible rank in " + path);
  std::vector<int> shape(rank);
  for (uint32_t i = 0; i < rank; ++i) {
    const uint32_t d = detail::get_u32le(is, path);
    if (d == 0 || d > (1u << 24)) throw std::runtime_error("tsr1: bad dim in " + path);
    shape[i] = static_cast<int>(d);
  }
  Tensor t(shape);
  for (auto& v : t.data) {
    const uint32_t bits = detail::get_u32le(is, path);
    std::memcpy(&v, &bits, 4);
  }
  return t;
}

// Label maps ride in TSR1 as f32-encoded integers for format uniformity.

inline Tensor labelmap_to_tensor(const LabelMap& m) {
  Tensor t({m.h, m.w});
  for (int64_t i = 0; i < m.numel(); ++i) t[i] = static_cast<float>(m.v[static_cast<size_t>(i)]);
  return t;
}

inline LabelMap tensor_to_labelmap(const Tensor& t) {
  if (t.rank() != 2) throw std::runtime_error("labelmap: expected rank-2 tensor, got " + t.shape_str());
  LabelMap m(t.dim(0), t.dim(1));
  for (int64_t i = 0; i < t.numel(); ++i) {
    const float v = t[i];
    const int32_t k = static_cast<int32_t>(std::lround(v));
    if (std::fabs(v - static_cast<float>(k)) > 1e-3f)
      throw std::runtime_error("labelmap: non-integer value in label tensor");
    m.v[static_cast<size_t>(i)] = k;
  }
  return m;
}

}  // namespace subseg
