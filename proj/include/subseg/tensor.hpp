#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace subseg {

/// Dense row-major tensor of arbitrary rank. Float storage by default;
/// TensorT<double> is used as the 64-bit shadow type in gradient tests.
template <typename T>
struct TensorT {
  std::vector<int> shape;
  std::vector<T> data;

  TensorT() = default;
  explicit TensorT(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
    for (int d : shape) {
      if (d <= 0) throw std::invalid_argument("tensor: non-positive dim " + std::to_string(d));
    }
    data.assign(static_cast<size_t>(numel_of(shape)), fill);
  }
  TensorT(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != numel_of(shape))
      throw std::invalid_argument("tensor: data size does not match shape");
  }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  bool is_scalar() const { return numel() == 1; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  // NCHW accessors for the 4-D case used throughout the model.
  T& at4(int n, int c, int h, int w) {
    return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  const T& at4(int n, int c, int h, int w) const {
    return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    for (const T& v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
  }
};

using Tensor = TensorT<float>;

/// Per-pixel integer class map (superclass y or subclass z).
struct LabelMap {
  int h = 0;
  int w = 0;
  std::vector<int32_t> v;

  LabelMap() = default;
  LabelMap(int h_, int w_, int32_t fill = 0) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {}

  int32_t& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  int32_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  bool operator==(const LabelMap& o) const { return h == o.h && w == o.w && v == o.v; }
};

namespace detail {
inline void check_same_shape(const char* op, const std::vector<int>& a, const std::vector<int>& b) {
  if (a != b) {
    std::ostringstream os;
    os << op << ": shape mismatch ";
    os << '[';
    for (size_t i = 0; i < a.size(); ++i) os << (i ? "x" : "") << a[i];
    os << "] vs [";
    for (size_t i = 0; i < b.size(); ++i) os << (i ? "x" : "") << b[i];
    os << ']';
    throw std::invalid_argument(os.str());
  }
}
}  // namespace detail

}  // namespace subseg
