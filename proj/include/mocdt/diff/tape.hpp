// Copyright 2026 The MocDT Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Reverse-mode tape. Nodes are appended in evaluation order, which is a
// topological order, so backward walks the tape from the loss downwards.

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mocdt/diff/array.hpp"
#include "mocdt/error.hpp"

namespace mocdt::diff {

enum class Op : std::uint8_t {
  kConstant, kLeaf, kParam,
  kMatmul, kAdd, kSub, kMul, kScale, kConcat, kStackRows, kRowSelect, kSliceCols, kTranspose,
  kTanh, kSigmoid, kSoftmax, kLayerNorm, kCrossEntropy, kSum,
};

inline const char* op_name(Op op) {
  static constexpr const char* kNames[] = {
      "constant", "leaf", "param", "matmul", "add", "sub", "mul", "scale", "concat", "stack_rows",
      "row_select", "slice_cols", "transpose", "tanh", "sigmoid", "softmax", "layer_norm",
      "cross_entropy_logits", "sum"};
  return kNames[static_cast<std::size_t>(op)];
}

template <class T>
class Tape;

/// Handle to a node on a tape.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::uint32_t id = 0;

  const Array<T>& value() const { return tape->value(*this); }
  const Array<T>& grad() const { return tape->grad(*this); }
};

template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::uint32_t)>;

  /// `checked` asserts finiteness of every forward value. With
  /// `grad_enabled` false no backward closures are recorded.
  explicit Tape(bool checked = true, bool grad_enabled = true)
      : checked_(checked), grad_enabled_(grad_enabled) {
    nodes_.reserve(256);
  }
  // Vars hold a pointer to their tape, so tapes never move.
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool checked() const { return checked_; }
  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  Var<T> constant(Array<T> value) {
    Node n;
    n.value = std::move(value);
    n.op = Op::kConstant;
    return append(std::move(n));
  }
  /// Leaf owning its value; gradients accumulate across backward calls.
  Var<T> leaf(Array<T> value) {
    Node n;
    n.value = std::move(value);
    n.op = Op::kLeaf;
    n.is_leaf = true;
    n.requires_grad = grad_enabled_;
    return append(std::move(n));
  }
  /// Leaf borrowing external storage, which must outlive the tape.
  Var<T> param(const Array<T>& storage) {
    Node n;
    n.borrowed = &storage;
    n.op = Op::kParam;
    n.is_leaf = true;
    n.requires_grad = grad_enabled_;
    return append(std::move(n));
  }

  const Array<T>& value(Var<T> v) const { return value(v.id); }
  const Array<T>& value(std::uint32_t id) const {
    const Node& n = nodes_[id];
    return n.borrowed ? *n.borrowed : n.value;
  }
  Op op(Var<T> v) const { return nodes_[v.id].op; }
  std::vector<std::uint32_t> parents(Var<T> v) const {
    const Node& n = nodes_[v.id];
    return {n.parents.begin(), n.parents.begin() + n.num_parents};
  }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }

  /// Accumulated gradient; zeros when nothing reached the node.
  const Array<T>& grad(Var<T> v) {
    Node& n = nodes_[v.id];
    if (!n.has_grad) {
      n.grad = Array<T>::like(value(v.id));
      n.has_grad = true;
    }
    return n.grad;
  }
  bool has_grad(Var<T> v) const { return nodes_[v.id].has_grad; }

  /// Mutable gradient buffer of `id`, zero-initialized on first use.
  Array<T>& grad_buffer(std::uint32_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Array<T>::like(value(id));
      n.has_grad = true;
    }
    return n.grad;
  }
  const Array<T>& upstream(std::uint32_t id) const { return nodes_[id].grad; }

  /// Records an op result. The closure runs during backward when the node
  /// received gradient; it is dropped when no parent needs gradients.
  Var<T> record(Op op, Array<T> value, std::initializer_list<std::uint32_t> parents, Backward backward) {
    if (checked_ && !value.all_finite()) {
      throw DivergenceError(std::string("non-finite value produced by ") + op_name(op));
    }
    Node n;
    n.value = std::move(value);
    n.op = op;
    for (auto p : parents) {
      n.parents[n.num_parents++] = p;
      n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(backward);
    return append(std::move(n));
  }
  /// Variant for ops with more than three parents (concat, stack_rows).
  Var<T> record_many(Op op, Array<T> value, const std::vector<std::uint32_t>& parents, Backward backward) {
    if (checked_ && !value.all_finite()) {
      throw DivergenceError(std::string("non-finite value produced by ") + op_name(op));
    }
    Node n;
    n.value = std::move(value);
    n.op = op;
    for (auto p : parents) n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
    if (n.requires_grad) n.backward = std::move(backward);
    return append(std::move(n));
  }

  /// Reverse accumulation from a scalar loss. Intermediate gradients are
  /// recomputed from scratch; leaf gradients add onto what they held.
  void backward(Var<T> loss) {
    if (value(loss.id).size() != 1) {
      throw DomainError("backward needs a scalar loss, got shape " + value(loss.id).shape_string());
    }
    for (auto& n : nodes_) {
      if (!n.is_leaf) {
        n.has_grad = false;
        n.grad = Array<T>();
      }
    }
    grad_buffer(loss.id)[0] += T(1);
    for (std::uint32_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.has_grad && n.backward) n.backward(*this, id);
    }
  }

  void zero_grad() {
    for (auto& n : nodes_) {
      n.has_grad = false;
      n.grad = Array<T>();
    }
  }

 private:
  struct Node {
    Array<T> value;
    const Array<T>* borrowed = nullptr;
    Array<T> grad;
    bool has_grad = false;
    bool is_leaf = false;
    bool requires_grad = false;
    Op op = Op::kConstant;
    std::uint8_t num_parents = 0;
    std::array<std::uint32_t, 3> parents{};
    Backward backward;
  };

  Var<T> append(Node&& n) {
    nodes_.push_back(std::move(n));
    return Var<T>{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  bool checked_;
  bool grad_enabled_;
  std::vector<Node> nodes_;
};

}  // namespace mocdt::diff
