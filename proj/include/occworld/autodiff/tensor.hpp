// SPDX-License-Identifier: Apache-2.0
#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// tensors. Every op produces a new node holding its value, its parents and a
// closure that pushes the node's gradient into the parents. Nodes that do
// not depend on any trainable leaf record nothing.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "occworld/core/error.hpp"

namespace occworld::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  /// Non-trainable value.
  static Tensor constant(Shape shape, std::vector<T> values) {
    check_size(shape, values.size());
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    return Tensor(std::move(n));
  }

  static Tensor constant(Shape shape, T fill = T(0)) {
    const auto count = numel(shape);
    return constant(std::move(shape), std::vector<T>(count, fill));
  }

  static Tensor scalar(T v) { return constant(Shape{1}, std::vector<T>{v}); }

  /// Trainable leaf.
  static Tensor parameter(Shape shape, std::vector<T> values) {
    Tensor t = constant(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node().shape; }
  std::size_t size() const { return node().value.size(); }
  std::size_t rank() const { return node().shape.size(); }
  std::size_t dim(std::size_t axis) const {
    if (axis >= rank()) {
      throw ShapeError(detail::concat("axis ", axis, " out of range for shape ",
                                      to_string(shape())));
    }
    return node().shape[axis];
  }
  std::size_t rows() const { return rank() == 2 ? dim(0) : 1; }
  std::size_t cols() const { return rank() == 2 ? dim(1) : size(); }

  const std::vector<T>& values() const { return node().value; }
  /// Mutable access for leaves (optimizer updates, initialization).
  std::vector<T>& mutable_values() { return node().value; }
  T item() const {
    if (size() != 1) {
      throw ShapeError("item() on tensor of shape " + to_string(shape()));
    }
    return node().value[0];
  }
  T operator[](std::size_t i) const { return node().value[i]; }
  T at(std::size_t r, std::size_t c) const { return node().value[r * cols() + c]; }

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool on) { node().requires_grad = on; }
  bool has_grad() const { return !node().grad.empty(); }
  /// Gradient buffer; zeros when nothing has flowed into this tensor yet.
  std::vector<T> grad() const {
    return node().grad.empty() ? std::vector<T>(size(), T(0)) : node().grad;
  }
  std::vector<T>& mutable_grad() { return node().ensure_grad(); }
  void zero_grad() { node().grad.clear(); }

  const std::string& op() const { return node().op; }
  const NodePtr& node_ptr() const { return node_; }
  Node<T>& node() const {
    if (!node_) throw Error("use of an undefined tensor");
    return *node_;
  }

  /// Same values, cut from the graph.
  Tensor detach() const { return constant(shape(), values()); }

  /// Back-propagates from this scalar; each reachable node's backward rule
  /// runs exactly once, in reverse topological order.
  void backward() const {
    if (size() != 1) {
      throw ShapeError("backward() requires a scalar, got shape " +
                       to_string(shape()));
    }
    if (!requires_grad()) return;
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node<T>* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node().ensure_grad()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = *it;
      if (n->backward && !n->grad.empty()) n->backward(*n);
    }
  }

  static void check_size(const Shape& shape, std::size_t count) {
    if (numel(shape) != count) {
      throw ShapeError(detail::concat("shape ", to_string(shape), " holds ",
                                      numel(shape), " values, got ", count));
    }
  }

 private:
  NodePtr node_;
};

/// Builds the node for an op result. The backward closure is only kept when
/// some parent is trainable.
template <typename T>
Tensor<T> make_result(std::string op, Shape shape, std::vector<T> value,
                      std::vector<Tensor<T>> parents,
                      std::function<void(Node<T>&)> backward) {
  Tensor<T>::check_size(shape, value.size());
  auto n = std::make_shared<Node<T>>();
  n->op = std::move(op);
  n->shape = std::move(shape);
  n->value = std::move(value);
  const bool needs = std::any_of(parents.begin(), parents.end(),
                                 [](const Tensor<T>& p) { return p.requires_grad(); });
  if (needs) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node_ptr());
    n->backward = std::move(backward);
  }
  return Tensor<T>(std::move(n));
}

/// Gradient sink of parent `i` when it is trainable, nullptr otherwise.
template <typename T>
std::vector<T>* parent_grad(Node<T>& n, std::size_t i) {
  auto& p = *n.parents[i];
  return p.requires_grad ? &p.ensure_grad() : nullptr;
}

}  // namespace occworld::ad
