#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "subseg/autodiff.hpp"
#include "subseg/hierarchy.hpp"
#include "subseg/ops.hpp"
#include "subseg/tensor.hpp"

namespace subseg {

template <typename T>
TensorT<T> onehot(const std::vector<LabelMap>& maps, int num_classes) {
  if (maps.empty()) throw std::invalid_argument("onehot: empty batch");
  const int N = static_cast<int>(maps.size()), H = maps[0].h, W = maps[0].w;
  TensorT<T> t({N, num_classes, H, W}, T(0));
  const int64_t plane = static_cast<int64_t>(H) * W;
  for (int n = 0; n < N; ++n) {
    if (maps[n].h != H || maps[n].w != W) throw std::invalid_argument("onehot: ragged batch");
    T* base = t.ptr() + static_cast<int64_t>(n) * num_classes * plane;
    for (int64_t i = 0; i < plane; ++i) {
      const int32_t c = maps[static_cast<size_t>(n)].v[static_cast<size_t>(i)];
      if (c < 0 || c >= num_classes)
        throw std::invalid_argument("onehot: label " + std::to_string(c) + " out of range");
      base[c * plane + i] = T(1);
    }
  }
  return t;
}

namespace detail {
template <typename T>
std::shared_ptr<TensorT<T>> softmax_values(const TensorT<T>& logits) {
  const int N = logits.dim(0), C = logits.dim(1);
  const int64_t plane = static_cast<int64_t>(logits.dim(2)) * logits.dim(3);
  auto probs = std::make_shared<TensorT<T>>(logits.shape);
  for (int n = 0; n < N; ++n) {
    const T* xp = logits.ptr() + static_cast<int64_t>(n) * C * plane;
    T* pp = probs->ptr() + static_cast<int64_t>(n) * C * plane;
    for (int64_t i = 0; i < plane; ++i) {
      T mx = xp[i];
      for (int c = 1; c < C; ++c) mx = std::max(mx, xp[c * plane + i]);
      double denom = 0.0;
      for (int c = 0; c < C; ++c) {
        const double e = std::exp(static_cast<double>(xp[c * plane + i] - mx));
        pp[c * plane + i] = static_cast<T>(e);
        denom += e;
      }
      for (int c = 0; c < C; ++c) pp[c * plane + i] = static_cast<T>(pp[c * plane + i] / denom);
    }
  }
  return probs;
}
}  // namespace detail

/// Cross-entropy plus soft Dice over softmax probabilities, with an optional
/// per-pixel weight mask (rank-3, N x H x W). Target rows are per-pixel
/// distributions over the channel axis; sums are batch-global.
template <typename T>
VarT<T> ce_dice_loss(const VarT<T>& logits, const TensorT<T>& target,
                     const TensorT<T>* pixel_weights = nullptr, T eps = T(1e-5)) {
  ops::detail::require_rank("ce_dice_loss", logits->value, 4);
  subseg::detail::check_same_shape("ce_dice_loss", logits->value.shape, target.shape);
  const int N = logits->value.dim(0), C = logits->value.dim(1);
  const int64_t plane = static_cast<int64_t>(logits->value.dim(2)) * logits->value.dim(3);
  const int64_t pixels = static_cast<int64_t>(N) * plane;

  auto weights = std::make_shared<TensorT<T>>();
  if (pixel_weights) {
    if (pixel_weights->numel() != pixels)
      throw std::invalid_argument("ce_dice_loss: weight mask size does not match pixels");
    *weights = *pixel_weights;
  } else {
    *weights = TensorT<T>({N, logits->value.dim(2), logits->value.dim(3)}, T(1));
  }

  double wsum = 0.0;
  for (int64_t i = 0; i < pixels; ++i) wsum += static_cast<double>((*weights)[i]);
  if (wsum <= 0.0) throw std::invalid_argument("ce_dice_loss: all pixels are masked out");

  for (int64_t i = 0; i < pixels; ++i) {
    const int n = static_cast<int>(i / plane);
    const int64_t sp = i % plane;
    double rs = 0.0;
    for (int c = 0; c < C; ++c)
      rs += static_cast<double>(target[(static_cast<int64_t>(n) * C + c) * plane + sp]);
    if (std::fabs(rs - 1.0) > 1e-4)
      throw std::invalid_argument("ce_dice_loss: target rows must sum to 1 (got " +
                                  std::to_string(rs) + ")");
  }

  auto probs = detail::softmax_values(logits->value);
  auto tgt = std::make_shared<TensorT<T>>(target);

  // CE: weighted mean over pixels of -sum_c t log p.
  double ce = 0.0;
  for (int n = 0; n < N; ++n)
    for (int64_t sp = 0; sp < plane; ++sp) {
      const double w = static_cast<double>((*weights)[n * plane + sp]);
      if (w == 0.0) continue;
      double pix = 0.0;
      for (int c = 0; c < C; ++c) {
        const int64_t off = (static_cast<int64_t>(n) * C + c) * plane + sp;
        const double t = static_cast<double>(target[off]);
        if (t > 0.0)
          pix -= t * std::log(std::max(static_cast<double>((*probs)[off]), 1e-45));
      }
      ce += w * pix;
    }
  ce /= wsum;

  // Dice: one term per class over batch-global weighted sums.
  auto numer = std::make_shared<std::vector<double>>(C);
  auto denom = std::make_shared<std::vector<double>>(C);
  for (int c = 0; c < C; ++c) {
    double spt = 0.0, sp_ = 0.0, st = 0.0;
    for (int n = 0; n < N; ++n) {
      const int64_t off = (static_cast<int64_t>(n) * C + c) * plane;
      for (int64_t i = 0; i < plane; ++i) {
        const double w = static_cast<double>((*weights)[n * plane + i]);
        if (w == 0.0) continue;
        const double p = static_cast<double>((*probs)[off + i]);
        const double t = static_cast<double>(target[off + i]);
        spt += w * p * t;
        sp_ += w * p;
        st += w * t;
      }
    }
    (*numer)[c] = 2.0 * spt + static_cast<double>(eps);
    (*denom)[c] = sp_ + st + static_cast<double>(eps);
  }
  double dice_ratio = 0.0;
  for (int c = 0; c < C; ++c) dice_ratio += (*numer)[c] / (*denom)[c];
  const double dice_loss = 1.0 - dice_ratio / C;

  TensorT<T> out({1});
  out[0] = static_cast<T>(ce + dice_loss);

  return subseg::detail::make_result<T>(
      std::move(out), {logits},
      [probs, tgt, weights, numer, denom, wsum](NodeT<T>& self) {
        auto& ln = *self.parents[0];
        if (!ln.requires_grad) return;
        const T g = self.grad[0];
        const int N = ln.value.dim(0), C = ln.value.dim(1);
        const int64_t plane = static_cast<int64_t>(ln.value.dim(2)) * ln.value.dim(3);
        std::vector<double> ddice_dp(static_cast<size_t>(C));
        for (int n = 0; n < N; ++n)
          for (int64_t sp = 0; sp < plane; ++sp) {
            const double w = static_cast<double>((*weights)[n * plane + sp]);
            if (w == 0.0) continue;
            // dDice/dp for each class at this pixel, then chain through softmax.
            double dot = 0.0;
            for (int c = 0; c < C; ++c) {
              const int64_t off = (static_cast<int64_t>(n) * C + c) * plane + sp;
              const double t = static_cast<double>((*tgt)[off]);
              const double d = (*denom)[c];
              ddice_dp[static_cast<size_t>(c)] =
                  -(1.0 / C) * w * (2.0 * t * d - (*numer)[c]) / (d * d);
              dot += ddice_dp[static_cast<size_t>(c)] * static_cast<double>((*probs)[off]);
            }
            for (int c = 0; c < C; ++c) {
              const int64_t off = (static_cast<int64_t>(n) * C + c) * plane + sp;
              const double p = static_cast<double>((*probs)[off]);
              const double t = static_cast<double>((*tgt)[off]);
              const double dce = (w / wsum) * (p - t);
              const double ddice = p * (ddice_dp[static_cast<size_t>(c)] - dot);
              ln.grad[off] += g * static_cast<T>(dce + ddice);
            }
          }
      });
}

/// Penalty on subclass probability mass assigned to the wrong superclass:
/// mean over pixels of -log(1 - q + 1e-7), q = sum of off-superclass mass.
template <typename T>
VarT<T> negative_learning_loss(const VarT<T>& sub_logits, const std::vector<LabelMap>& y,
                               const HierarchySpec& hier) {
  ops::detail::require_rank("negative_learning_loss", sub_logits->value, 4);
  const int N = sub_logits->value.dim(0), K = sub_logits->value.dim(1);
  if (K != hier.num_sub())
    throw std::invalid_argument("negative_learning_loss: channel count != K");
  if (static_cast<int>(y.size()) != N)
    throw std::invalid_argument("negative_learning_loss: batch size mismatch");
  const int64_t plane = static_cast<int64_t>(sub_logits->value.dim(2)) * sub_logits->value.dim(3);
  constexpr double kGuard = 1e-7;

  auto probs = detail::softmax_values(sub_logits->value);
  auto wrong_mass = std::make_shared<TensorT<T>>(
      TensorT<T>({N, sub_logits->value.dim(2), sub_logits->value.dim(3)}, T(0)));
  auto labels = std::make_shared<std::vector<LabelMap>>(y);

  double total = 0.0;
  for (int n = 0; n < N; ++n)
    for (int64_t i = 0; i < plane; ++i) {
      const int super = y[static_cast<size_t>(n)].v[static_cast<size_t>(i)];
      double q = 0.0;
      for (int k = 0; k < K; ++k)
        if (hier.parent[static_cast<size_t>(k)] != super)
          q += static_cast<double>((*probs)[(static_cast<int64_t>(n) * K + k) * plane + i]);
      (*wrong_mass)[n * plane + i] = static_cast<T>(q);
      total -= std::log(1.0 - q + kGuard);
    }
  const int64_t M = static_cast<int64_t>(N) * plane;
  TensorT<T> out({1});
  out[0] = static_cast<T>(total / static_cast<double>(M));

  auto parent_map = std::make_shared<std::vector<int>>(hier.parent);
  return subseg::detail::make_result<T>(
      std::move(out), {sub_logits}, [probs, wrong_mass, labels, parent_map, M](NodeT<T>& self) {
        auto& ln = *self.parents[0];
        if (!ln.requires_grad) return;
        const T g = self.grad[0];
        const int N = ln.value.dim(0), K = ln.value.dim(1);
        const int64_t plane = static_cast<int64_t>(ln.value.dim(2)) * ln.value.dim(3);
        for (int n = 0; n < N; ++n)
          for (int64_t i = 0; i < plane; ++i) {
            const int super = (*labels)[static_cast<size_t>(n)].v[static_cast<size_t>(i)];
            const double q = static_cast<double>((*wrong_mass)[n * plane + i]);
            const double scale = 1.0 / ((1.0 - q + kGuard) * static_cast<double>(M));
            for (int k = 0; k < K; ++k) {
              const int64_t off = (static_cast<int64_t>(n) * K + k) * plane + i;
              const double p = static_cast<double>((*probs)[off]);
              const double wrong = (*parent_map)[static_cast<size_t>(k)] != super ? 1.0 : 0.0;
              ln.grad[off] += g * static_cast<T>(p * (wrong - q) * scale);
            }
          }
      });
}

}  // namespace subseg
