#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "maf/tensor.hpp"

namespace maf {

// Reverse-mode tape. Every op output keeps shared pointers to its inputs, so
// a graph lives exactly as long as the last Var referencing its root.

template <class S>
struct Node {
  Tensor<S> value;
  Tensor<S> grad;
  bool requires_grad = false;
  bool retain_grad = false;
  std::vector<std::shared_ptr<Node<S>>> parents;
  std::function<void(Node<S>&)> backward_fn;

  Tensor<S>& ensure_grad() {
    if (grad.size() != value.size()) grad = Tensor<S>(value.shape);
    return grad;
  }
  bool has_grad() const { return grad.size() == value.size() && !value.data.empty(); }
};

namespace detail {
inline thread_local bool grad_enabled = true;
}

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled; }

template <class S>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<S>> n) : node_(std::move(n)) {}

  static Var leaf(Tensor<S> value, bool requires_grad = false) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<S>& value() const { return node_->value; }
  Tensor<S>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape; }
  int dim(int i) const { return node_->value.dim(i); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  Tensor<S>& grad() { return node_->ensure_grad(); }
  const Tensor<S>& grad() const { return node_->grad; }
  bool has_grad() const { return node_->has_grad(); }
  /// Keeps this intermediate's gradient after backward().
  void retain_grad() { node_->retain_grad = true; }
  void zero_grad() {
    if (node_->has_grad()) node_->grad.fill(S(0));
  }
  Node<S>* node() const { return node_.get(); }
  const std::shared_ptr<Node<S>>& shared() const { return node_; }

  /// A new leaf holding a copy of the value, cut from the graph.
  Var detach() const { return leaf(node_->value, false); }

 private:
  std::shared_ptr<Node<S>> node_;
};

/// Creates an op output. The backward closure receives the output node; it
/// must read `out.grad` and accumulate into parents that require grad.
template <class S>
Var<S> make_op(Tensor<S> value, std::vector<Var<S>> inputs,
               std::function<void(Node<S>&)> backward) {
  auto n = std::make_shared<Node<S>>();
  n->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& v : inputs) any = any || v.requires_grad();
    if (any) {
      n->requires_grad = true;
      n->parents.reserve(inputs.size());
      for (auto& v : inputs) n->parents.push_back(v.shared());
      n->backward_fn = std::move(backward);
    }
  }
  return Var<S>(std::move(n));
}

/// Back-propagates from a scalar root (seed 1) or with an explicit seed.
template <class S>
void backward(const Var<S>& root, const Tensor<S>* seed = nullptr) {
  if (!root.requires_grad()) return;
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> seen;
  // iterative post-order DFS
  std::vector<std::pair<Node<S>*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node<S>* p = n->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  Node<S>* r = root.node();
  r->ensure_grad();
  if (seed) {
    expect_shape(seed->shape, r->value.shape, "backward seed");
    for (std::size_t i = 0; i < seed->size(); ++i) r->grad[i] += (*seed)[i];
  } else {
    for (auto& g : r->grad.data) g += S(1);
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* n = *it;
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }
  // intermediate grads are dropped so the next pass starts clean
  for (Node<S>* n : order)
    if (n->backward_fn && !n->retain_grad) n->grad = Tensor<S>();
}

}  // namespace maf
