#pragma once

#include <fstream>
#include <string>

#include "subseg/tensor.hpp"

namespace subseg {

/// Binary 8-bit PGM of a label map, class index scaled to 255/(K-1).
inline void write_label_pgm(const std::string& path, const LabelMap& m, int num_classes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("pgm: cannot open for write: " + path);
  os << "P5\n" << m.w << ' ' << m.h << "\n255\n";
  const int denom = num_classes > 1 ? num_classes - 1 : 1;
  for (int32_t v : m.v) {
    const int g = static_cast<int>(v) * 255 / denom;
    os.put(static_cast<char>(g < 0 ? 0 : (g > 255 ? 255 : g)));
  }
  if (!os) throw std::runtime_error("pgm: write failed: " + path);
}

}  // namespace subseg
