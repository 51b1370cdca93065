#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "subseg/autodiff.hpp"
#include "subseg/parallel.hpp"
#include "subseg/tensor.hpp"

namespace subseg {
namespace ops {

/// Names of every differentiable operator the library ships. Gradient-check
/// suites iterate this list so no op can silently lose its test.
inline const std::vector<std::string>& op_catalogue() {
  static const std::vector<std::string> names = {
      "conv2d", "relu",    "max_pool2d", "upsample_nearest2", "concat", "batch_norm",
      "softmax", "add",    "mul",        "scale",             "crop",   "sum",
      "mean"};
  return names;
}

namespace detail {

template <typename T>
void require_rank(const char* op, const TensorT<T>& t, int rank) {
  if (t.rank() != rank)
    throw std::invalid_argument(std::string(op) + ": expected rank-" + std::to_string(rank) +
                                " tensor, got " + t.shape_str());
}

// Valid output range [lo, hi) for input index = output index + shift.
inline std::pair<int, int> shifted_range(int size, int shift) {
  return {std::max(0, -shift), size - std::max(0, shift)};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: stride 1, zero padding preserving spatial size, odd square kernels.
// x: N x Ci x H x W, w: Co x Ci x k x k, b: Co  ->  N x Co x H x W
//
// All three kernels run over im2col patch matrices so the hot loops iterate
// the full spatial plane (P = H*W) instead of single rows, which keeps SIMD
// lanes busy at the deep, spatially small layers. 1x1 convolutions use the
// input planes directly as their patch matrix.

namespace detail {

// col is Q x P with Q = Ci*K*K, q = (ic*K + kh)*K + kw:
// col[q][oh*W + ow] = x[ic][oh + kh - pad][ow + kw - pad], zero outside.
template <typename T>
void im2col_plane(const T* xp, int Ci, int H, int W, int K, T* col) {
  const int pad = (K - 1) / 2;
  const int64_t plane = static_cast<int64_t>(H) * W;
  T* crow = col;
  for (int ic = 0; ic < Ci; ++ic) {
    const T* ip = xp + static_cast<int64_t>(ic) * plane;
    for (int kh = 0; kh < K; ++kh) {
      const int sh = kh - pad;
      const auto [oh_lo, oh_hi] = shifted_range(H, sh);
      for (int kw = 0; kw < K; ++kw, crow += plane) {
        const int sw = kw - pad;
        const auto [ow_lo, ow_hi] = shifted_range(W, sw);
        if (oh_lo > 0) std::fill_n(crow, static_cast<int64_t>(oh_lo) * W, T(0));
        for (int oh = oh_lo; oh < oh_hi; ++oh) {
          T* dst = crow + static_cast<int64_t>(oh) * W;
          const T* src = ip + static_cast<int64_t>(oh + sh) * W + sw;
          if (ow_lo > 0) std::fill_n(dst, ow_lo, T(0));
          std::copy_n(src + ow_lo, ow_hi - ow_lo, dst + ow_lo);
          if (ow_hi < W) std::fill_n(dst + ow_hi, W - ow_hi, T(0));
        }
        if (oh_hi < H) std::fill_n(crow + static_cast<int64_t>(oh_hi) * W, static_cast<int64_t>(H - oh_hi) * W, T(0));
      }
    }
  }
}

// Batch im2col scratch; empty when the conv is 1x1 and x serves directly.
template <typename T>
struct ColBuffer {
  std::vector<T> data;
  const TensorT<T>* x = nullptr;
  int64_t q_count = 0, plane = 0;

  void build(const TensorT<T>& input, int K) {
    const int N = input.dim(0), Ci = input.dim(1), H = input.dim(2), W = input.dim(3);
    x = &input;
    plane = static_cast<int64_t>(H) * W;
    q_count = static_cast<int64_t>(Ci) * K * K;
    if (K == 1) return;
    data.resize(static_cast<size_t>(N) * q_count * plane);
    parallel_for(N, [&](int64_t lo, int64_t hi) {
      for (int64_t n = lo; n < hi; ++n)
        im2col_plane(input.ptr() + n * Ci * plane, Ci, H, W, K,
                     data.data() + n * q_count * plane);
    });
  }

  const T* row(int64_t n, int64_t q) const {
    if (data.empty()) return x->ptr() + (n * q_count + q) * plane;  // K == 1
    return data.data() + (n * q_count + q) * plane;
  }
};

// Fixed 32-lane summation tree: four independent SIMD accumulators keep the
// FMA pipeline full without reassociating floats.
template <typename T>
T span_dot(const T* a, const T* b, int64_t len) {
  T lane[32] = {};
  int64_t i = 0;
  for (; i + 32 <= len; i += 32)
    for (int l = 0; l < 32; ++l) lane[l] += a[i + l] * b[i + l];
  for (; i < len; ++i) lane[i % 32] += a[i] * b[i];
  T s0 = T(0), s1 = T(0), s2 = T(0), s3 = T(0);
  for (int l = 0; l < 8; ++l) s0 += lane[l];
  for (int l = 8; l < 16; ++l) s1 += lane[l];
  for (int l = 16; l < 24; ++l) s2 += lane[l];
  for (int l = 24; l < 32; ++l) s3 += lane[l];
  return (s0 + s1) + (s2 + s3);
}

}  // namespace detail

template <typename T>
void conv2d_forward_kernel(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                           TensorT<T>& out) {
  const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(0), K = w.dim(2);
  const int64_t plane = static_cast<int64_t>(H) * W;
  detail::ColBuffer<T> col;
  col.build(x, K);
  const int64_t Q = col.q_count;
  parallel_for(static_cast<int64_t>(N) * Co, [&](int64_t lo, int64_t hi) {
    for (int64_t idx = lo; idx < hi; ++idx) {
      const int64_t n = idx / Co;
      const int64_t oc = idx % Co;
      T* op = out.ptr() + idx * plane;
      const T* wrow = w.ptr() + oc * Q;
      const T bias = b[oc];
      for (int64_t i = 0; i < plane; ++i) op[i] = bias;
      int64_t q = 0;
      for (; q + 4 <= Q; q += 4) {
        const T a0 = wrow[q], a1 = wrow[q + 1], a2 = wrow[q + 2], a3 = wrow[q + 3];
        const T* c0 = col.row(n, q);
        const T* c1 = col.row(n, q + 1);
        const T* c2 = col.row(n, q + 2);
        const T* c3 = col.row(n, q + 3);
        for (int64_t i = 0; i < plane; ++i)
          op[i] += a0 * c0[i] + a1 * c1[i] + a2 * c2[i] + a3 * c3[i];
      }
      for (; q < Q; ++q) {
        const T a = wrow[q];
        const T* c = col.row(n, q);
        for (int64_t i = 0; i < plane; ++i) op[i] += a * c[i];
      }
    }
  });
}

template <typename T>
void conv2d_backward_input_kernel(const TensorT<T>& g, const TensorT<T>& w, TensorT<T>& dx) {
  const int N = dx.dim(0), Ci = dx.dim(1), H = dx.dim(2), W = dx.dim(3);
  const int Co = w.dim(0), K = w.dim(2);
  const int pad = (K - 1) / 2;
  const int64_t plane = static_cast<int64_t>(H) * W;
  const int64_t Q = static_cast<int64_t>(Ci) * K * K;
  parallel_for(N, [&](int64_t n_lo, int64_t n_hi) {
    std::vector<T> dcol(K == 1 ? 0 : static_cast<size_t>(Q) * plane);
    for (int64_t n = n_lo; n < n_hi; ++n) {
      const T* gp = g.ptr() + n * Co * plane;
      if (K == 1) {
        // dx[ic] += sum_oc w[oc][ic] * g[oc], directly.
        for (int ic = 0; ic < Ci; ++ic) {
          T* drow = dx.ptr() + (n * Ci + ic) * plane;
          for (int oc = 0; oc < Co; ++oc) {
            const T a = w[static_cast<int64_t>(oc) * Ci + ic];
            const T* grow = gp + static_cast<int64_t>(oc) * plane;
            for (int64_t i = 0; i < plane; ++i) drow[i] += a * grow[i];
          }
        }
        continue;
      }
      // dcol = w^T g, then scatter-add taps back onto dx.
      for (int64_t q = 0; q < Q; ++q) {
        T* crow = dcol.data() + q * plane;
        std::fill_n(crow, plane, T(0));
        int oc = 0;
        for (; oc + 4 <= Co; oc += 4) {
          const T a0 = w[static_cast<int64_t>(oc) * Q + q];
          const T a1 = w[(static_cast<int64_t>(oc) + 1) * Q + q];
          const T a2 = w[(static_cast<int64_t>(oc) + 2) * Q + q];
          const T a3 = w[(static_cast<int64_t>(oc) + 3) * Q + q];
          const T* g0 = gp + static_cast<int64_t>(oc) * plane;
          const T* g1 = g0 + plane;
          const T* g2 = g1 + plane;
          const T* g3 = g2 + plane;
          for (int64_t i = 0; i < plane; ++i)
            crow[i] += a0 * g0[i] + a1 * g1[i] + a2 * g2[i] + a3 * g3[i];
        }
        for (; oc < Co; ++oc) {
          const T a = w[static_cast<int64_t>(oc) * Q + q];
          const T* grow = gp + static_cast<int64_t>(oc) * plane;
          for (int64_t i = 0; i < plane; ++i) crow[i] += a * grow[i];
        }
      }
      for (int ic = 0; ic < Ci; ++ic) {
        T* dplane = dx.ptr() + (n * Ci + ic) * plane;
        for (int kh = 0; kh < K; ++kh) {
          const int sh = kh - pad;
          const auto [oh_lo, oh_hi] = detail::shifted_range(H, sh);
          for (int kw = 0; kw < K; ++kw) {
            const int sw = kw - pad;
            const auto [ow_lo, ow_hi] = detail::shifted_range(W, sw);
            const int len = ow_hi - ow_lo;
            if (len <= 0) continue;
            const T* crow = dcol.data() + ((static_cast<int64_t>(ic) * K + kh) * K + kw) * plane;
            for (int oh = oh_lo; oh < oh_hi; ++oh) {
              T* drow = dplane + static_cast<int64_t>(oh + sh) * W + ow_lo + sw;
              const T* srow = crow + static_cast<int64_t>(oh) * W + ow_lo;
              for (int i = 0; i < len; ++i) drow[i] += srow[i];
            }
          }
        }
      }
    }
  });
}

template <typename T>
void conv2d_backward_weight_kernel(const TensorT<T>& g, const TensorT<T>& x, TensorT<T>& dw) {
  const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
  const int Co = dw.dim(0), K = dw.dim(2);
  const int64_t plane = static_cast<int64_t>(H) * W;
  detail::ColBuffer<T> col;
  col.build(x, K);
  const int64_t Q = col.q_count;
  // Blocks of four output channels share each streamed col row.
  constexpr int kBlock = 4;
  const int64_t blocks = (Co + kBlock - 1) / kBlock;
  parallel_for(blocks, [&](int64_t lo, int64_t hi) {
    std::vector<double> acc(static_cast<size_t>(kBlock) * Q);
    for (int64_t blk = lo; blk < hi; ++blk) {
      const int oc0 = static_cast<int>(blk * kBlock);
      const int nb = std::min(kBlock, Co - oc0);
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int n = 0; n < N; ++n) {
        const T* gbase = g.ptr() + (static_cast<int64_t>(n) * Co + oc0) * plane;
        for (int64_t q = 0; q < Q; ++q) {
          const T* crow = col.row(n, q);
          for (int b = 0; b < nb; ++b)
            acc[static_cast<size_t>(b) * Q + q] +=
                static_cast<double>(detail::span_dot(gbase + static_cast<int64_t>(b) * plane, crow, plane));
        }
      }
      for (int b = 0; b < nb; ++b) {
        T* dwp = dw.ptr() + (static_cast<int64_t>(oc0) + b) * Q;
        for (int64_t q = 0; q < Q; ++q)
          dwp[q] += static_cast<T>(acc[static_cast<size_t>(b) * Q + q]);
      }
    }
  });
}

template <typename T>
VarT<T> conv2d(const VarT<T>& x, const VarT<T>& w, const VarT<T>& b) {
  detail::require_rank("conv2d", x->value, 4);
  detail::require_rank("conv2d", w->value, 4);
  detail::require_rank("conv2d", b->value, 1);
  const int Ci = x->value.dim(1), K = w->value.dim(2);
  if (w->value.dim(1) != Ci)
    throw std::invalid_argument("conv2d: input channels " + x->value.shape_str() +
                                " do not match kernel " + w->value.shape_str());
  if (w->value.dim(3) != K || K % 2 == 0)
    throw std::invalid_argument("conv2d: kernel must be odd square, got " + w->value.shape_str());
  if (b->value.dim(0) != w->value.dim(0))
    throw std::invalid_argument("conv2d: bias " + b->value.shape_str() + " does not match kernel " +
                                w->value.shape_str());

  TensorT<T> out({x->value.dim(0), w->value.dim(0), x->value.dim(2), x->value.dim(3)});
  conv2d_forward_kernel(x->value, w->value, b->value, out);
  return subseg::detail::make_result<T>(
      std::move(out), {x, w, b}, [](NodeT<T>& self) {
        auto& xn = *self.parents[0];
        auto& wn = *self.parents[1];
        auto& bn = *self.parents[2];
        if (xn.requires_grad) conv2d_backward_input_kernel(self.grad, wn.value, xn.grad);
        if (wn.requires_grad) conv2d_backward_weight_kernel(self.grad, xn.value, wn.grad);
        if (bn.requires_grad) {
          const int N = self.grad.dim(0), Co = self.grad.dim(1);
          const int64_t plane = static_cast<int64_t>(self.grad.dim(2)) * self.grad.dim(3);
          for (int oc = 0; oc < Co; ++oc) {
            double acc = 0.0;
            for (int n = 0; n < N; ++n) {
              const T* gp = self.grad.ptr() + (static_cast<int64_t>(n) * Co + oc) * plane;
              for (int64_t i = 0; i < plane; ++i) acc += static_cast<double>(gp[i]);
            }
            bn.grad[oc] += static_cast<T>(acc);
          }
        }
      });
}

// ---------------------------------------------------------------------------

template <typename T>
VarT<T> relu(const VarT<T>& x) {
  TensorT<T> out(x->value.shape);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = x->value[i] > T(0) ? x->value[i] : T(0);
  return subseg::detail::make_result<T>(std::move(out), {x}, [](NodeT<T>& self) {
    auto& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    for (int64_t i = 0; i < self.grad.numel(); ++i)
      if (xn.value[i] > T(0)) xn.grad[i] += self.grad[i];
  });
}

/// 2x2 max pooling, stride 2. Ties resolve to the first element in
/// (top-left, top-right, bottom-left, bottom-right) scan order.
template <typename T>
VarT<T> max_pool2(const VarT<T>& x) {
  detail::require_rank("max_pool2d", x->value, 4);
  const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  if (H % 2 != 0 || W % 2 != 0)
    throw std::invalid_argument("max_pool2d: spatial dims must be even, got " + x->value.shape_str());
  const int Ho = H / 2, Wo = W / 2;
  TensorT<T> out({N, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out.numel()));
  int64_t o = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* plane = x->value.ptr() + (static_cast<int64_t>(n) * C + c) * H * W;
      const int64_t base = (static_cast<int64_t>(n) * C + c) * H * W;
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow, ++o) {
          int64_t best_idx = static_cast<int64_t>(2 * oh) * W + 2 * ow;
          T best = plane[best_idx];
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const int64_t idx = static_cast<int64_t>(2 * oh + dy) * W + 2 * ow + dx;
              if (plane[idx] > best) {
                best = plane[idx];
                best_idx = idx;
              }
            }
          out[o] = best;
          (*argmax)[static_cast<size_t>(o)] = base + best_idx;
        }
    }
  return subseg::detail::make_result<T>(std::move(out), {x}, [argmax](NodeT<T>& self) {
    auto& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    for (int64_t i = 0; i < self.grad.numel(); ++i)
      xn.grad[(*argmax)[static_cast<size_t>(i)]] += self.grad[i];
  });
}

/// Nearest-neighbor x2 upsampling.
template <typename T>
VarT<T> upsample_nearest2(const VarT<T>& x) {
  detail::require_rank("upsample_nearest2", x->value, 4);
  const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  TensorT<T> out({N, C, 2 * H, 2 * W});
  for (int64_t p = 0; p < static_cast<int64_t>(N) * C; ++p) {
    const T* ip = x->value.ptr() + p * H * W;
    T* op = out.ptr() + p * 4 * H * W;
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        const T v = ip[static_cast<int64_t>(h) * W + w];
        T* row0 = op + static_cast<int64_t>(2 * h) * 2 * W + 2 * w;
        T* row1 = row0 + 2 * W;
        row0[0] = row0[1] = row1[0] = row1[1] = v;
      }
  }
  return subseg::detail::make_result<T>(std::move(out), {x}, [](NodeT<T>& self) {
    auto& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    const int H = xn.value.dim(2), W = xn.value.dim(3);
    const int64_t planes = static_cast<int64_t>(xn.value.dim(0)) * xn.value.dim(1);
    for (int64_t p = 0; p < planes; ++p) {
      T* dp = xn.grad.ptr() + p * H * W;
      const T* gp = self.grad.ptr() + p * 4 * H * W;
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          const T* row0 = gp + static_cast<int64_t>(2 * h) * 2 * W + 2 * w;
          const T* row1 = row0 + 2 * W;
          dp[static_cast<int64_t>(h) * W + w] += row0[0] + row0[1] + row1[0] + row1[1];
        }
    }
  });
}

/// Concatenation along the channel axis.
template <typename T>
VarT<T> concat_channels(const VarT<T>& a, const VarT<T>& b) {
  detail::require_rank("concat", a->value, 4);
  detail::require_rank("concat", b->value, 4);
  if (a->value.dim(0) != b->value.dim(0) || a->value.dim(2) != b->value.dim(2) ||
      a->value.dim(3) != b->value.dim(3))
    throw std::invalid_argument("concat: incompatible shapes " + a->value.shape_str() + " and " +
                                b->value.shape_str());
  const int N = a->value.dim(0), Ca = a->value.dim(1), Cb = b->value.dim(1);
  const int H = a->value.dim(2), W = a->value.dim(3);
  const int64_t plane = static_cast<int64_t>(H) * W;
  TensorT<T> out({N, Ca + Cb, H, W});
  for (int n = 0; n < N; ++n) {
    std::copy_n(a->value.ptr() + static_cast<int64_t>(n) * Ca * plane, Ca * plane,
                out.ptr() + static_cast<int64_t>(n) * (Ca + Cb) * plane);
    std::copy_n(b->value.ptr() + static_cast<int64_t>(n) * Cb * plane, Cb * plane,
                out.ptr() + (static_cast<int64_t>(n) * (Ca + Cb) + Ca) * plane);
  }
  return subseg::detail::make_result<T>(std::move(out), {a, b}, [](NodeT<T>& self) {
    auto& an = *self.parents[0];
    auto& bn = *self.parents[1];
    const int N = an.value.dim(0), Ca = an.value.dim(1), Cb = bn.value.dim(1);
    const int64_t plane = static_cast<int64_t>(an.value.dim(2)) * an.value.dim(3);
    for (int n = 0; n < N; ++n) {
      const T* g = self.grad.ptr() + static_cast<int64_t>(n) * (Ca + Cb) * plane;
      if (an.requires_grad) {
        T* da = an.grad.ptr() + static_cast<int64_t>(n) * Ca * plane;
        for (int64_t i = 0; i < Ca * plane; ++i) da[i] += g[i];
      }
      if (bn.requires_grad) {
        T* db = bn.grad.ptr() + static_cast<int64_t>(n) * Cb * plane;
        for (int64_t i = 0; i < Cb * plane; ++i) db[i] += g[Ca * plane + i];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// batch_norm: per-channel affine with running statistics. Training mode
// normalizes by biased batch statistics over (N, H, W); inference mode is a
// fixed affine map from the running statistics.

template <typename T>
struct BnStatsT {
  TensorT<T> running_mean;
  TensorT<T> running_var;
  explicit BnStatsT(int channels = 1)
      : running_mean({channels}, T(0)), running_var({channels}, T(1)) {}
};

template <typename T>
VarT<T> batch_norm(const VarT<T>& x, const VarT<T>& gamma, const VarT<T>& beta, BnStatsT<T>& stats,
                   bool training, bool update_stats, T momentum = T(0.1), T eps = T(1e-5)) {
  detail::require_rank("batch_norm", x->value, 4);
  const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  if (gamma->value.numel() != C || beta->value.numel() != C || stats.running_mean.numel() != C)
    throw std::invalid_argument("batch_norm: channel mismatch for input " + x->value.shape_str());
  const int64_t plane = static_cast<int64_t>(H) * W;
  const int64_t M = static_cast<int64_t>(N) * plane;

  auto mean = std::make_shared<std::vector<T>>(C);
  auto invstd = std::make_shared<std::vector<T>>(C);
  if (training) {
    for (int c = 0; c < C; ++c) {
      double s = 0.0;
      for (int n = 0; n < N; ++n) {
        const T* p = x->value.ptr() + (static_cast<int64_t>(n) * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) s += static_cast<double>(p[i]);
      }
      const double m = s / static_cast<double>(M);
      double v = 0.0;
      for (int n = 0; n < N; ++n) {
        const T* p = x->value.ptr() + (static_cast<int64_t>(n) * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          const double d = static_cast<double>(p[i]) - m;
          v += d * d;
        }
      }
      v /= static_cast<double>(M);
      (*mean)[c] = static_cast<T>(m);
      (*invstd)[c] = static_cast<T>(1.0 / std::sqrt(v + static_cast<double>(eps)));
      if (update_stats) {
        stats.running_mean[c] = (T(1) - momentum) * stats.running_mean[c] + momentum * static_cast<T>(m);
        stats.running_var[c] = (T(1) - momentum) * stats.running_var[c] + momentum * static_cast<T>(v);
      }
    }
  } else {
    for (int c = 0; c < C; ++c) {
      (*mean)[c] = stats.running_mean[c];
      (*invstd)[c] =
          static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats.running_var[c]) + static_cast<double>(eps)));
    }
  }

  TensorT<T> out(x->value.shape);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* p = x->value.ptr() + (static_cast<int64_t>(n) * C + c) * plane;
      T* op = out.ptr() + (static_cast<int64_t>(n) * C + c) * plane;
      const T m = (*mean)[c], is = (*invstd)[c], g = gamma->value[c], bt = beta->value[c];
      for (int64_t i = 0; i < plane; ++i) op[i] = g * (p[i] - m) * is + bt;
    }

  const bool used_batch_stats = training;
  return subseg::detail::make_result<T>(
      std::move(out), {x, gamma, beta}, [mean, invstd, used_batch_stats, M](NodeT<T>& self) {
        auto& xn = *self.parents[0];
        auto& gn = *self.parents[1];
        auto& bn = *self.parents[2];
        const int N = xn.value.dim(0), C = xn.value.dim(1);
        const int64_t plane = static_cast<int64_t>(xn.value.dim(2)) * xn.value.dim(3);
        for (int c = 0; c < C; ++c) {
          const T m = (*mean)[c], is = (*invstd)[c];
          double sg = 0.0, sgx = 0.0;
          for (int n = 0; n < N; ++n) {
            const T* g = self.grad.ptr() + (static_cast<int64_t>(n) * C + c) * plane;
            const T* xv = xn.value.ptr() + (static_cast<int64_t>(n) * C + c) * plane;
            for (int64_t i = 0; i < plane; ++i) {
              sg += static_cast<double>(g[i]);
              sgx += static_cast<double>(g[i]) * static_cast<double>((xv[i] - m) * is);
            }
          }
          if (gn.requires_grad) gn.grad[c] += static_cast<T>(sgx);
          if (bn.requires_grad) bn.grad[c] += static_cast<T>(sg);
          if (xn.requires_grad) {
            const T gamma_c = gn.value[c];
            if (used_batch_stats) {
              const T mg = static_cast<T>(sg / static_cast<double>(M));
              const T mgx = static_cast<T>(sgx / static_cast<double>(M));
              for (int n = 0; n < N; ++n) {
                const T* g = self.grad.ptr() + (static_cast<int64_t>(n) * C + c) * plane;
                const T* xv = xn.value.ptr() + (static_cast<int64_t>(n) * C + c) * plane;
                T* dx = xn.grad.ptr() + (static_cast<int64_t>(n) * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) {
                  const T xhat = (xv[i] - m) * is;
                  dx[i] += gamma_c * is * (g[i] - mg - xhat * mgx);
                }
              }
            } else {
              for (int n = 0; n < N; ++n) {
                const T* g = self.grad.ptr() + (static_cast<int64_t>(n) * C + c) * plane;
                T* dx = xn.grad.ptr() + (static_cast<int64_t>(n) * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) dx[i] += gamma_c * is * g[i];
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------

/// Softmax over the channel axis, per pixel, max-shifted for stability.
template <typename T>
VarT<T> softmax_channels(const VarT<T>& x) {
  detail::require_rank("softmax", x->value, 4);
  const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  const int64_t plane = static_cast<int64_t>(H) * W;
  TensorT<T> out(x->value.shape);
  for (int n = 0; n < N; ++n) {
    const T* xp = x->value.ptr() + static_cast<int64_t>(n) * C * plane;
    T* op = out.ptr() + static_cast<int64_t>(n) * C * plane;
    for (int64_t i = 0; i < plane; ++i) {
      T mx = xp[i];
      for (int c = 1; c < C; ++c) mx = std::max(mx, xp[c * plane + i]);
      double denom = 0.0;
      for (int c = 0; c < C; ++c) {
        const double e = std::exp(static_cast<double>(xp[c * plane + i] - mx));
        op[c * plane + i] = static_cast<T>(e);
        denom += e;
      }
      for (int c = 0; c < C; ++c) op[c * plane + i] = static_cast<T>(op[c * plane + i] / denom);
    }
  }
  return subseg::detail::make_result<T>(std::move(out), {x}, [](NodeT<T>& self) {
    auto& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    const int N = xn.value.dim(0), C = xn.value.dim(1);
    const int64_t plane = static_cast<int64_t>(xn.value.dim(2)) * xn.value.dim(3);
    for (int n = 0; n < N; ++n) {
      const T* p = self.value.ptr() + static_cast<int64_t>(n) * C * plane;
      const T* g = self.grad.ptr() + static_cast<int64_t>(n) * C * plane;
      T* dx = xn.grad.ptr() + static_cast<int64_t>(n) * C * plane;
      for (int64_t i = 0; i < plane; ++i) {
        double dot = 0.0;
        for (int c = 0; c < C; ++c)
          dot += static_cast<double>(g[c * plane + i]) * static_cast<double>(p[c * plane + i]);
        for (int c = 0; c < C; ++c)
          dx[c * plane + i] += p[c * plane + i] * (g[c * plane + i] - static_cast<T>(dot));
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise and shape ops.

template <typename T>
VarT<T> add(const VarT<T>& a, const VarT<T>& b) {
  subseg::detail::check_same_shape("add", a->value.shape, b->value.shape);
  TensorT<T> out(a->value.shape);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] + b->value[i];
  return subseg::detail::make_result<T>(std::move(out), {a, b}, [](NodeT<T>& self) {
    for (int pi = 0; pi < 2; ++pi) {
      auto& pn = *self.parents[pi];
      if (!pn.requires_grad) continue;
      for (int64_t i = 0; i < self.grad.numel(); ++i) pn.grad[i] += self.grad[i];
    }
  });
}

template <typename T>
VarT<T> mul(const VarT<T>& a, const VarT<T>& b) {
  subseg::detail::check_same_shape("mul", a->value.shape, b->value.shape);
  TensorT<T> out(a->value.shape);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * b->value[i];
  return subseg::detail::make_result<T>(std::move(out), {a, b}, [](NodeT<T>& self) {
    auto& an = *self.parents[0];
    auto& bn = *self.parents[1];
    if (an.requires_grad)
      for (int64_t i = 0; i < self.grad.numel(); ++i) an.grad[i] += self.grad[i] * bn.value[i];
    if (bn.requires_grad)
      for (int64_t i = 0; i < self.grad.numel(); ++i) bn.grad[i] += self.grad[i] * an.value[i];
  });
}

template <typename T>
VarT<T> scale(const VarT<T>& a, T s) {
  TensorT<T> out(a->value.shape);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * s;
  return subseg::detail::make_result<T>(std::move(out), {a}, [s](NodeT<T>& self) {
    auto& an = *self.parents[0];
    if (!an.requires_grad) return;
    for (int64_t i = 0; i < self.grad.numel(); ++i) an.grad[i] += self.grad[i] * s;
  });
}

/// Spatial crop of a NCHW tensor: rows [y0, y0+h), cols [x0, x0+w).
template <typename T>
VarT<T> crop_spatial(const VarT<T>& x, int y0, int x0, int h, int w) {
  detail::require_rank("crop", x->value, 4);
  const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  if (y0 < 0 || x0 < 0 || h <= 0 || w <= 0 || y0 + h > H || x0 + w > W)
    throw std::invalid_argument("crop: window [" + std::to_string(y0) + "," + std::to_string(x0) +
                                "," + std::to_string(h) + "," + std::to_string(w) +
                                "] outside input " + x->value.shape_str());
  TensorT<T> out({N, C, h, w});
  for (int64_t p = 0; p < static_cast<int64_t>(N) * C; ++p) {
    const T* ip = x->value.ptr() + p * H * W;
    T* op = out.ptr() + p * h * w;
    for (int r = 0; r < h; ++r)
      std::copy_n(ip + static_cast<int64_t>(y0 + r) * W + x0, w, op + static_cast<int64_t>(r) * w);
  }
  return subseg::detail::make_result<T>(std::move(out), {x}, [y0, x0, h, w](NodeT<T>& self) {
    auto& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    const int H = xn.value.dim(2), W = xn.value.dim(3);
    for (int64_t p = 0; p < static_cast<int64_t>(xn.value.dim(0)) * xn.value.dim(1); ++p) {
      T* dp = xn.grad.ptr() + p * H * W;
      const T* gp = self.grad.ptr() + p * h * w;
      for (int r = 0; r < h; ++r) {
        T* drow = dp + static_cast<int64_t>(y0 + r) * W + x0;
        const T* grow = gp + static_cast<int64_t>(r) * w;
        for (int i = 0; i < w; ++i) drow[i] += grow[i];
      }
    }
  });
}

template <typename T>
VarT<T> sum_all(const VarT<T>& x) {
  double acc = 0.0;
  for (int64_t i = 0; i < x->value.numel(); ++i) acc += static_cast<double>(x->value[i]);
  TensorT<T> out({1});
  out[0] = static_cast<T>(acc);
  return subseg::detail::make_result<T>(std::move(out), {x}, [](NodeT<T>& self) {
    auto& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    const T g = self.grad[0];
    for (int64_t i = 0; i < xn.grad.numel(); ++i) xn.grad[i] += g;
  });
}

template <typename T>
VarT<T> mean_all(const VarT<T>& x) {
  const T inv = T(1) / static_cast<T>(x->value.numel());
  double acc = 0.0;
  for (int64_t i = 0; i < x->value.numel(); ++i) acc += static_cast<double>(x->value[i]);
  TensorT<T> out({1});
  out[0] = static_cast<T>(acc) * inv;
  return subseg::detail::make_result<T>(std::move(out), {x}, [inv](NodeT<T>& self) {
    auto& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    const T g = self.grad[0] * inv;
    for (int64_t i = 0; i < xn.grad.numel(); ++i) xn.grad[i] += g;
  });
}

/// Value copy with the tape severed; the prior-concatenation path uses this
/// to keep subclass-loss gradients out of the superclass head.
template <typename T>
VarT<T> detach(const VarT<T>& x) {
  return make_const(x->value);
}

}  // namespace ops
}  // namespace subseg
