#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "subseg/tensor.hpp"

namespace subseg {

// Reverse-mode tape over a fixed operator set. Ops execute eagerly and
// record a backward closure; backward() walks the graph from a scalar loss
// and accumulates into leaf gradients.

template <typename T>
struct NodeT;

template <typename T>
using VarT = std::shared_ptr<NodeT<T>>;

template <typename T>
struct NodeT {
  TensorT<T> value;
  TensorT<T> grad;  // allocated for leaves at creation, for interior nodes at backward time
  bool requires_grad = false;
  std::vector<VarT<T>> parents;
  std::function<void(NodeT<T>&)> backprop;

  bool is_leaf() const { return parents.empty(); }

  void ensure_grad() {
    if (grad.shape != value.shape) grad = TensorT<T>(value.shape, T(0));
  }
  void zero_grad() {
    ensure_grad();
    grad.fill(T(0));
  }
};

using Var = VarT<float>;

namespace autodiff {

/// Thread-local op recording switch; NoGradGuard turns taping off for
/// inference-style forwards (pseudo-label probes, evaluation).
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

}  // namespace autodiff

template <typename T>
VarT<T> make_leaf(TensorT<T> value, bool requires_grad) {
  auto n = std::make_shared<NodeT<T>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  if (requires_grad) n->zero_grad();
  return n;
}

template <typename T>
VarT<T> make_const(TensorT<T> value) {
  return make_leaf(std::move(value), false);
}

namespace detail {

/// Wires up a freshly computed op result. Parent list and closure are only
/// recorded when taping is on and some parent needs gradients.
template <typename T>
VarT<T> make_result(TensorT<T> value, std::vector<VarT<T>> parents,
                    std::function<void(NodeT<T>&)> backprop) {
  auto n = std::make_shared<NodeT<T>>();
  n->value = std::move(value);
  bool needs = false;
  if (autodiff::grad_mode()) {
    for (const auto& p : parents)
      if (p && p->requires_grad) needs = true;
  }
  if (needs) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

}  // namespace detail

/// Populates grads of all reachable gradient-requiring leaves. Leaf grads
/// accumulate across calls; interior grads are rebuilt every call.
template <typename T>
void backward(const VarT<T>& loss) {
  if (!loss) throw std::invalid_argument("backward: null node");
  if (!loss->value.is_scalar())
    throw std::invalid_argument("backward: loss must be scalar, got shape " + loss->value.shape_str());
  if (!loss->requires_grad) return;  // constant loss: nothing reachable

  // Post-order DFS; state 1 = on stack (cycle detector), 2 = done.
  std::vector<NodeT<T>*> order;
  std::unordered_map<NodeT<T>*, int> state;
  std::vector<std::pair<NodeT<T>*, size_t>> stack;
  stack.emplace_back(loss.get(), 0);
  state[loss.get()] = 1;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT<T>* p = node->parents[next++].get();
      if (!p || !p->requires_grad) continue;
      auto it = state.find(p);
      if (it == state.end()) {
        state[p] = 1;
        stack.emplace_back(p, 0);
      } else if (it->second == 1) {
        throw std::runtime_error("backward: cycle detected in computation graph");
      }
    } else {
      state[node] = 2;
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (NodeT<T>* n : order) {
    if (!n->is_leaf()) n->zero_grad();
    else n->ensure_grad();
  }
  loss->grad[0] += T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT<T>* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

}  // namespace subseg
