#pragma once

#include <string>
#include <vector>

#include "subseg/autodiff.hpp"
#include "subseg/tensor.hpp"

namespace subseg {

struct SgdConfig {
  float base_lr = 0.01f;
  float momentum = 0.9f;
  int total_iters = 4000;

  void validate() const {
    if (base_lr <= 0.f) throw std::invalid_argument("sgd: base_lr must be positive");
    if (momentum < 0.f || momentum >= 1.f) throw std::invalid_argument("sgd: momentum must be in [0,1)");
    if (total_iters <= 0) throw std::invalid_argument("sgd: total_iters must be positive");
  }
};

/// Trainable tensor: value lives in a gradient-requiring leaf node, the
/// momentum buffer is owned alongside it.
struct Parameter {
  std::string name;
  Var node;
  Tensor momentum;

  Parameter(std::string n, Tensor value)
      : name(std::move(n)),
        node(make_leaf(std::move(value), /*requires_grad=*/true)),
        momentum(node->value.shape, 0.f) {}

  Tensor& value() { return node->value; }
  const Tensor& value() const { return node->value; }
  Tensor& grad() { return node->grad; }
  const Tensor& grad() const { return node->grad; }
};

/// buf <- momentum * buf + grad;  value <- value - lr * buf;  grad <- 0.
inline void sgd_step(std::vector<Parameter>& params, float lr, float momentum) {
  for (auto& p : params) {
    p.node->ensure_grad();
    for (int64_t i = 0; i < p.value().numel(); ++i) {
      p.momentum[i] = momentum * p.momentum[i] + p.grad()[i];
      p.value()[i] -= lr * p.momentum[i];
      p.grad()[i] = 0.f;
    }
  }
}

/// Linear decay from base_lr at iter 0 toward zero at total_iters.
inline float lr_schedule(int iter, const SgdConfig& cfg) {
  if (iter < 0 || iter >= cfg.total_iters)
    throw std::invalid_argument("lr_schedule: iteration " + std::to_string(iter) +
                                " outside [0, " + std::to_string(cfg.total_iters) + ")");
  return static_cast<float>(static_cast<double>(cfg.base_lr) *
                            (1.0 - static_cast<double>(iter) / static_cast<double>(cfg.total_iters)));
}

inline void zero_grads(std::vector<Parameter>& params) {
  for (auto& p : params) p.node->zero_grad();
}

}  // namespace subseg
