#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lrvc/core/instrument.hpp"
#include "lrvc/core/tensor.hpp"

namespace lrvc {

namespace detail {
inline thread_local bool g_grad_enabled = true;
}

inline bool grad_enabled() { return detail::g_grad_enabled; }

/// Disables graph recording for the enclosing scope (inference mode).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::g_grad_enabled) { detail::g_grad_enabled = false; }
  ~NoGradGuard() { detail::g_grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Tensor<T>&)> backward;

  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>::like(value);
    return grad;
  }
};

/// Handle to a value in the computation graph. Copies share the node.
template <typename T>
class Var {
 public:
  using Scalar = T;

  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& grad_buffer() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad = Tensor<T>(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool r) { node_->requires_grad = r; }
  const std::vector<int>& shape() const { return node_->value.shape(); }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

  /// Leaf copy of the value, cut from the graph.
  Var detach() const { return Var(node_->value); }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Creates the result node of an op. `backward` receives the output gradient
/// and must accumulate into the parents that require grad.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<std::shared_ptr<Node<T>>> parents,
                   std::function<void(const Tensor<T>&)> backward) {
  if (value.rank() == 3) note_activation(value.channels(), value.height(), value.width());
  Var<T> out(std::move(value));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& p : parents) any = any || p->requires_grad;
  if (!any) return out;
  auto& n = *out.node();
  n.requires_grad = true;
  n.parents = std::move(parents);
  n.backward = std::move(backward);
  return out;
}

/// Reverse-mode sweep from a scalar root. The graph is released afterwards.
template <typename T>
void backward(const Var<T>& root) {
  if (!root.requires_grad()) return;
  // Owning order: releasing a consumed node's closure must not free parents
  // that are still waiting to be visited.
  std::vector<std::shared_ptr<Node<T>>> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<std::shared_ptr<Node<T>>, size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      const auto& p = n->parents[i++];
      if (p->requires_grad && !seen.count(p.get())) {
        seen.insert(p.get());
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  auto& g = root.node()->grad_buffer();
  for (auto& v : g.vec()) v = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = it->get();
    if (n->backward && !n->grad.empty()) n->backward(n->grad);
    if (n->backward) {
      // Interior node: free its gradient and edges once consumed.
      n->grad = Tensor<T>();
      n->backward = nullptr;
      n->parents.clear();
    }
    it->reset();
  }
}

}  // namespace lrvc
