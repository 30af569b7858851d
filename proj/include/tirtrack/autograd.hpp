#pragma once

#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tirtrack/tensor.hpp"

namespace tirtrack {

struct Node {
  Tensor value;
  std::vector<double> grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;

  /// Gradient buffer, allocated as zeros on first use. Empty when the node
  /// does not take part in differentiation.
  std::span<double> grad_buffer() {
    if (!requires_grad) return {};
    if (grad.empty()) grad.assign(value.numel(), 0.0);
    return grad;
  }

  std::span<double> parent_grad(std::size_t i) {
    return parents[i]->grad_buffer();
  }
  const Tensor& parent_value(std::size_t i) const { return parents[i]->value; }
};

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_mode_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) {
    detail::grad_mode_flag() = false;
  }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Handle to a value in the differentiation graph.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return Var(std::move(n));
  }

  static Var leaf(Tensor value, bool requires_grad = true) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t numel() const { return node_->value.numel(); }
  std::size_t extent(std::size_t axis) const { return node_->value.extent(axis); }
  bool requires_grad() const { return node_->requires_grad; }
  double item() const { return node_->value[0]; }

  std::span<const double> grad() const { return node_->grad; }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Build a result node. The backward closure is stored only when grad mode
/// is on and at least one parent requires a gradient.
template <typename Backward>
Var make_result(Tensor value, std::vector<Var> parents, Backward&& backward) {
  bool needs = false;
  if (grad_mode_enabled()) {
    for (const Var& p : parents) needs = needs || p.requires_grad();
  }
  if (!needs) return Var::constant(std::move(value));
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->parents.reserve(parents.size());
  for (Var& p : parents) n->parents.push_back(p.ptr());
  n->backward_fn = std::forward<Backward>(backward);
  return Var(std::move(n));
}

/// Reverse-mode sweep from a scalar root. Gradients accumulate into every
/// reachable node that requires them (parameters keep theirs across calls).
inline void backward(const Var& root) {
  if (root.numel() != 1) {
    contract_fail("backward: root must be scalar, got ", shape_str(root.shape()));
  }
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

}  // namespace tirtrack
