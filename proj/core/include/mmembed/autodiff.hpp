// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "mmembed/tensor.hpp"

namespace mmembed {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

/// Reverse-mode autodiff tape.
///
/// Nodes are appended in creation order, which is a topological order of the
/// computation, so `backward` simply walks the node list in reverse and calls
/// each node's backward closure once. Gradients are accumulated (`+=`), never
/// overwritten, so shared subexpressions receive the sum of their uses.
///
/// A tape constructed with `record = false` stores forward values only. Such
/// a tape holds no reference to mutable model state beyond the bound
/// parameters it reads, so concurrent inference on separate tapes against
/// the same (unmodified) parameters is safe.
class Tape {
 public:
  /// Called during backward with the node's own output gradient available
  /// through `tape.grad_of(self)`; accumulates into its inputs' grads.
  using BackwardFn = std::function<void(Tape& tape, int self)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  /// A constant input. Never receives a gradient.
  Var constant(Tensor value);

  /// A leaf input that receives a gradient (used by grad_check and tests).
  Var leaf(Tensor value);

  /// Binds an externally owned parameter. The value is read in place; after
  /// `backward` its gradient is accumulated into `param.grad()` when the
  /// parameter has `requires_grad()` set. Binding the same tensor twice
  /// returns the same Var.
  Var bind(Tensor& param);

  /// Records the output of an op. `backward` is dropped unless recording is
  /// on and at least one input needs a gradient.
  Var push(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  /// Gradient buffer for a node, allocated (zeros) on first access.
  std::span<double> grad_of(int id);
  std::span<double> grad_of(Var v) { return grad_of(v.id); }
  /// Read-only gradient; empty if nothing flowed into the node.
  std::span<const double> grad(Var v) const { return nodes_[v.id].grad; }

  /// Seeds d(root)/d(root) = 1 and back-propagates. `root` must hold a single
  /// element. May be called once per tape.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

  /// Number of nodes whose backward closure ran in the last backward pass.
  std::size_t backward_visits() const { return backward_visits_; }

 private:
  struct Node {
    Tensor owned;
    Tensor* bound = nullptr;
    std::vector<double> grad;
    BackwardFn backward;
    bool needs_grad = false;
  };

  bool record_;
  bool backward_done_ = false;
  std::size_t backward_visits_ = 0;
  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, int> bound_ids_;
};

}  // namespace mmembed
