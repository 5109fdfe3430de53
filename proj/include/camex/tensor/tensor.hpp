/* Copyright 2026 The CAMEx Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Dense row-major float64 tensor with a reverse-mode tape.
//
// A Tensor is a handle onto a graph node. Copying a Tensor aliases the node
// (parameters must keep their identity so that backward() can deposit
// gradients on them); use clone() for an independent deep copy. Graph
// recording only happens when an operand requires a gradient and gradient
// mode is enabled on the calling thread.

#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "camex/errors.hpp"

namespace camex {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  // Shared so that reshape() is a view and never copies.
  std::shared_ptr<std::vector<double>> storage;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(std::span<const double>)> backward;

  std::size_t numel() const { return storage->size(); }

  std::span<double> grad_buffer() {
    if (grad.empty()) grad.assign(numel(), 0.0);
    return grad;
  }
};

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

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("tensor shape " + shape_str(shape) + " holds " +
                           std::to_string(shape_numel(shape)) +
                           " values, got " + std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->storage = std::make_shared<std::vector<double>>(std::move(values));
    node_->requires_grad = requires_grad;
  }

  static Tensor full(Shape shape, double value) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
  }
  static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }
  static Tensor scalar(double value) { return Tensor(Shape{}, {value}); }

  static Tensor eye(std::size_t n) {
    Tensor t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.mutable_values()[i * n + i] = 1.0;
    return t;
  }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> v;
    v.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      v.insert(v.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(v));
  }

  /// Tensor over existing storage (used by reshape views).
  static Tensor over_storage(Shape shape, std::shared_ptr<std::vector<double>> storage) {
    if (shape_numel(shape) != storage->size()) {
      throw DimensionError("view shape " + shape_str(shape) + " does not cover storage");
    }
    Tensor t;
    t.node_ = std::make_shared<detail::Node>();
    t.node_->shape = std::move(shape);
    t.node_->storage = std::move(storage);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->numel(); }

  std::span<const double> values() const { return *node_->storage; }
  /// In-place access for optimizers and perturbation oracles. Writes are seen
  /// by every view sharing this storage.
  std::span<double> mutable_values() { return *node_->storage; }

  double item() const {
    if (numel() != 1) {
      throw ContractError("item() on tensor of shape " + shape_str(shape()));
    }
    return (*node_->storage)[0];
  }
  double operator[](std::size_t i) const { return (*node_->storage)[i]; }
  double at(std::size_t r, std::size_t c) const {
    return (*node_->storage)[r * dim(1) + c];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    if (!node_->leaf) throw ContractError("requires_grad can only be set on leaves");
    node_->requires_grad = on;
    return *this;
  }
  bool is_leaf() const { return node_->leaf; }
  std::string_view op() const { return node_->op; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  /// Gradient as a fresh tensor; zeros when nothing has been accumulated.
  Tensor grad_tensor() const {
    if (node_->grad.empty()) return zeros(shape());
    return Tensor(shape(), node_->grad);
  }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  /// Deep copy with no history.
  Tensor clone(bool requires_grad = false) const {
    return Tensor(shape(), *node_->storage, requires_grad);
  }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

/// Result tensor of a primitive. `backward` receives the upstream gradient and
/// accumulates into the operands through grad_of().
inline Tensor attach(Tensor out, std::string_view op, const std::vector<Tensor>& operands,
                     std::function<void(std::span<const double>)> backward) {
  bool track = grad_mode_enabled() &&
               std::any_of(operands.begin(), operands.end(),
                           [](const Tensor& t) { return t.requires_grad(); });
  auto& node = *out.node_ptr();
  node.op = op;
  if (track) {
    node.leaf = false;
    node.requires_grad = true;
    node.parents.reserve(operands.size());
    for (const auto& t : operands) node.parents.push_back(t.node_ptr());
    node.backward = std::move(backward);
  }
  return out;
}

inline Tensor make_result(std::string_view op, Shape shape, std::vector<double> values,
                          const std::vector<Tensor>& operands,
                          std::function<void(std::span<const double>)> backward) {
  return attach(Tensor(std::move(shape), std::move(values)), op, operands, std::move(backward));
}

/// Gradient accumulator of an operand, or an empty span if it is not tracked.
inline std::span<double> grad_of(const Tensor& t) {
  if (!t.requires_grad()) return {};
  return t.node_ptr()->grad_buffer();
}

}  // namespace detail

/// Reverse sweep from a scalar loss. Leaf gradients accumulate across calls
/// until zero_grad(); intermediate gradients are recomputed on each call and
/// stay readable through grad() afterwards.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node_ptr().get(), 0);
  seen.insert(loss.node_ptr().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::Node* n : order) {
    if (!n->leaf) n->grad.assign(n->numel(), 0.0);
  }
  loss.node_ptr()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->leaf && n->backward) n->backward(n->grad);
  }
}

}  // namespace camex
