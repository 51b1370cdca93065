#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "subseg/hierarchy.hpp"
#include "subseg/rng.hpp"
#include "subseg/tensor.hpp"

namespace subseg {

// ---------------------------------------------------------------------------
// Spatial transforms: pure index permutations, exactly invertible.
// apply = rot90_ccw^k ( flip_v ( flip_h (x) ) ).

struct SpatialTransform {
  int rot90_k = 0;  // counter-clockwise quarter turns
  bool flip_h = false;
  bool flip_v = false;
};

namespace detail {

template <typename F>
Tensor remap_chw(const Tensor& in, int out_h, int out_w, F&& src_of) {
  const int C = in.dim(0), H = in.dim(1), W = in.dim(2);
  (void)H;
  (void)W;
  Tensor out({C, out_h, out_w});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x) {
        const auto [sy, sx] = src_of(y, x);
        out[(static_cast<int64_t>(c) * out_h + y) * out_w + x] =
            in[(static_cast<int64_t>(c) * in.dim(1) + sy) * in.dim(2) + sx];
      }
  return out;
}

inline Tensor flip_h_chw(const Tensor& t) {
  return remap_chw(t, t.dim(1), t.dim(2),
                   [&](int y, int x) { return std::pair<int, int>{y, t.dim(2) - 1 - x}; });
}
inline Tensor flip_v_chw(const Tensor& t) {
  return remap_chw(t, t.dim(1), t.dim(2),
                   [&](int y, int x) { return std::pair<int, int>{t.dim(1) - 1 - y, x}; });
}
// One counter-clockwise quarter turn: out(y, x) = in(x, W_in - 1 - y).
inline Tensor rot90_chw(const Tensor& t) {
  return remap_chw(t, t.dim(2), t.dim(1),
                   [&](int y, int x) { return std::pair<int, int>{x, t.dim(2) - 1 - y}; });
}

}  // namespace detail

inline Tensor apply_transform(const SpatialTransform& t, const Tensor& chw) {
  if (chw.rank() != 3) throw std::invalid_argument("apply_transform: expected C x H x W tensor");
  Tensor out = chw;
  if (t.flip_h) out = detail::flip_h_chw(out);
  if (t.flip_v) out = detail::flip_v_chw(out);
  for (int i = 0; i < (t.rot90_k % 4 + 4) % 4; ++i) out = detail::rot90_chw(out);
  return out;
}

inline Tensor apply_inverse_transform(const SpatialTransform& t, const Tensor& chw) {
  if (chw.rank() != 3)
    throw std::invalid_argument("apply_inverse_transform: expected C x H x W tensor");
  Tensor out = chw;
  for (int i = 0; i < (4 - t.rot90_k % 4) % 4; ++i) out = detail::rot90_chw(out);
  if (t.flip_v) out = detail::flip_v_chw(out);
  if (t.flip_h) out = detail::flip_h_chw(out);
  return out;
}

inline LabelMap apply_transform(const SpatialTransform& t, const LabelMap& m) {
  Tensor tm({1, m.h, m.w});
  for (int64_t i = 0; i < m.numel(); ++i) tm[i] = static_cast<float>(m.v[static_cast<size_t>(i)]);
  const Tensor r = apply_transform(t, tm);
  LabelMap out(r.dim(1), r.dim(2));
  for (int64_t i = 0; i < out.numel(); ++i) out.v[static_cast<size_t>(i)] = static_cast<int32_t>(r[i]);
  return out;
}

/// Uniform over the 16 (rotation, flip) combinations; identity included.
inline SpatialTransform sample_transform(Rng& rng) {
  SpatialTransform t;
  t.rot90_k = static_cast<int>(rng.below(4));
  t.flip_h = rng.coin();
  t.flip_v = rng.coin();
  return t;
}

// ---------------------------------------------------------------------------
// Transform-invariant pseudo-labels.

struct PseudoLabel {
  LabelMap z_pse;            // 0 where invalid
  std::vector<uint8_t> valid;  // H*W mask
  float tau_used = 0.f;
};

/// A pixel is accepted only when both argmax predictions agree, both carry
/// confidence >= tau, and the agreed subclass lies under the pixel's known
/// superclass.
inline PseudoLabel make_pseudo_label(const Tensor& probs_a, const Tensor& probs_b_aligned,
                                     const LabelMap& y, float tau, const HierarchySpec& hier) {
  if (tau < 0.f || tau > 1.f)
    throw std::invalid_argument("make_pseudo_label: tau must lie in [0,1], got " + std::to_string(tau));
  if (probs_a.rank() != 3 || probs_a.shape != probs_b_aligned.shape)
    throw std::invalid_argument("make_pseudo_label: probability map shapes differ");
  const int K = probs_a.dim(0), H = probs_a.dim(1), W = probs_a.dim(2);
  if (K != hier.num_sub() || y.h != H || y.w != W)
    throw std::invalid_argument("make_pseudo_label: shape mismatch with label map");

  PseudoLabel out;
  out.tau_used = tau;
  out.z_pse = LabelMap(H, W, 0);
  out.valid.assign(static_cast<size_t>(H) * W, 0);
  const int64_t plane = static_cast<int64_t>(H) * W;
  for (int64_t i = 0; i < plane; ++i) {
    int a = 0, b = 0;
    float pa = probs_a[i], pb = probs_b_aligned[i];
    for (int k = 1; k < K; ++k) {
      if (probs_a[k * plane + i] > pa) {
        pa = probs_a[k * plane + i];
        a = k;
      }
      if (probs_b_aligned[k * plane + i] > pb) {
        pb = probs_b_aligned[k * plane + i];
        b = k;
      }
    }
    const bool ok = a == b && pa >= tau && pb >= tau &&
                    hier.parent[static_cast<size_t>(a)] == y.v[static_cast<size_t>(i)];
    if (ok) {
      out.valid[static_cast<size_t>(i)] = 1;
      out.z_pse.v[static_cast<size_t>(i)] = a;
    }
  }
  return out;
}

/// Confidence gate: 1 at iteration 0, linear decay to 0.4 at `total`.
inline float tau_schedule(int iter, int total) {
  if (total <= 0 || iter < 0 || iter > total)
    throw std::invalid_argument("tau_schedule: iteration " + std::to_string(iter) +
                                " outside [0, " + std::to_string(total) + "]");
  return static_cast<float>(1.0 - 0.6 * static_cast<double>(iter) / static_cast<double>(total));
}

// ---------------------------------------------------------------------------
// Foreground-region mixup.

struct BBox {
  int y0 = 0, x0 = 0, h = 0, w = 0;
};

inline std::optional<BBox> foreground_bbox(const LabelMap& y) {
  int y0 = y.h, y1 = -1, x0 = y.w, x1 = -1;
  for (int r = 0; r < y.h; ++r)
    for (int c = 0; c < y.w; ++c)
      if (y.at(r, c) != 0) {
        y0 = std::min(y0, r);
        y1 = std::max(y1, r);
        x0 = std::min(x0, c);
        x1 = std::max(x1, c);
      }
  if (y1 < 0) return std::nullopt;
  return BBox{y0, x0, y1 - y0 + 1, x1 - x0 + 1};
}

struct MixResult {
  Tensor x_mix;      // C x H x W
  LabelMap z_full;   // resized fine labels inside the bbox, background outside
  BBox mix_bbox;
  float alpha = 1.f;
};

namespace detail {

// Half-pixel-center coordinate mapping, clamped at the edges.
inline Tensor resize_bilinear_chw(const Tensor& in, int oh, int ow) {
  const int C = in.dim(0), H = in.dim(1), W = in.dim(2);
  Tensor out({C, oh, ow});
  const double sy = static_cast<double>(H) / oh, sx = static_cast<double>(W) / ow;
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double fy = (y + 0.5) * sy - 0.5, fx = (x + 0.5) * sx - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(H - 1));
        fx = std::clamp(fx, 0.0, static_cast<double>(W - 1));
        const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
        const int y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
        const double wy = fy - y0, wx = fx - x0;
        const auto v = [&](int yy, int xx) {
          return static_cast<double>(in[(static_cast<int64_t>(c) * H + yy) * W + xx]);
        };
        const double val = (1 - wy) * ((1 - wx) * v(y0, x0) + wx * v(y0, x1)) +
                           wy * ((1 - wx) * v(y1, x0) + wx * v(y1, x1));
        out[(static_cast<int64_t>(c) * oh + y) * ow + x] = static_cast<float>(val);
      }
  return out;
}

inline LabelMap resize_nearest(const LabelMap& in, int oh, int ow) {
  LabelMap out(oh, ow);
  const double sy = static_cast<double>(in.h) / oh, sx = static_cast<double>(in.w) / ow;
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      const int iy = std::min(in.h - 1, static_cast<int>((y + 0.5) * sy));
      const int ix = std::min(in.w - 1, static_cast<int>((x + 0.5) * sx));
      out.at(y, x) = in.at(iy, ix);
    }
  return out;
}

}  // namespace detail

/// Crops the fine sample's foreground bbox, resizes it to the coarse
/// sample's foreground bbox (bilinear image, nearest labels) and overlays it
/// there with weight alpha. Outside the bbox x is untouched and z_full is
/// background.
inline MixResult mix_images(const Tensor& x, const LabelMap& y, const Tensor& x_fine,
                            const LabelMap& y_fine, const LabelMap& z_fine, float alpha) {
  if (alpha < 0.5f || alpha > 1.f)
    throw std::invalid_argument("mix_images: alpha must lie in [0.5, 1], got " + std::to_string(alpha));
  const auto b_coarse = foreground_bbox(y);
  const auto b_fine = foreground_bbox(y_fine);
  if (!b_coarse) throw std::runtime_error("mix_images: coarse sample has empty foreground");
  if (!b_fine) throw std::runtime_error("mix_images: fine sample has empty foreground");

  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const BBox B = *b_coarse, Bf = *b_fine;

  Tensor crop_img({C, Bf.h, Bf.w});
  for (int c = 0; c < C; ++c)
    for (int yy = 0; yy < Bf.h; ++yy)
      for (int xx = 0; xx < Bf.w; ++xx)
        crop_img[(static_cast<int64_t>(c) * Bf.h + yy) * Bf.w + xx] =
            x_fine[(static_cast<int64_t>(c) * x_fine.dim(1) + Bf.y0 + yy) * x_fine.dim(2) + Bf.x0 + xx];
  LabelMap crop_z(Bf.h, Bf.w);
  for (int yy = 0; yy < Bf.h; ++yy)
    for (int xx = 0; xx < Bf.w; ++xx) crop_z.at(yy, xx) = z_fine.at(Bf.y0 + yy, Bf.x0 + xx);

  const Tensor patch = detail::resize_bilinear_chw(crop_img, B.h, B.w);
  const LabelMap label_patch = detail::resize_nearest(crop_z, B.h, B.w);

  MixResult out;
  out.alpha = alpha;
  out.mix_bbox = B;
  out.x_mix = x;
  out.z_full = LabelMap(H, W, 0);
  for (int c = 0; c < C; ++c)
    for (int yy = 0; yy < B.h; ++yy)
      for (int xx = 0; xx < B.w; ++xx) {
        const int64_t dst = (static_cast<int64_t>(c) * H + B.y0 + yy) * W + B.x0 + xx;
        out.x_mix[dst] = alpha * patch[(static_cast<int64_t>(c) * B.h + yy) * B.w + xx] +
                         (1.f - alpha) * x[dst];
      }
  for (int yy = 0; yy < B.h; ++yy)
    for (int xx = 0; xx < B.w; ++xx) out.z_full.at(B.y0 + yy, B.x0 + xx) = label_patch.at(yy, xx);
  return out;
}

/// Soft supervision for f(x_mix): where the pseudo-label is valid the target
/// blends resized fine labels with the pseudo-label at weight alpha,
/// elsewhere the resized fine labels stand alone at full weight.
inline std::pair<Tensor, Tensor> mixed_target(const LabelMap& z_full, const PseudoLabel& pseudo,
                                              float alpha, int num_classes) {
  const int H = z_full.h, W = z_full.w;
  if (pseudo.z_pse.h != H || pseudo.z_pse.w != W)
    throw std::invalid_argument("mixed_target: pseudo-label shape mismatch");
  Tensor target({num_classes, H, W}, 0.f);
  Tensor weight({H, W}, 1.f);
  const int64_t plane = static_cast<int64_t>(H) * W;
  for (int64_t i = 0; i < plane; ++i) {
    const int32_t zc = z_full.v[static_cast<size_t>(i)];
    if (pseudo.valid[static_cast<size_t>(i)]) {
      target[zc * plane + i] += alpha;
      target[pseudo.z_pse.v[static_cast<size_t>(i)] * plane + i] += 1.f - alpha;
    } else {
      target[zc * plane + i] = 1.f;
    }
  }
  return {std::move(target), std::move(weight)};
}

}  // namespace subseg
