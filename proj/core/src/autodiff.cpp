// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmembed/autodiff.hpp"

#include "mmembed/error.hpp"

namespace mmembed {

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.owned = std::move(value);
  n.needs_grad = record_;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::bind(Tensor& param) {
  if (auto it = bound_ids_.find(&param); it != bound_ids_.end()) {
    return {this, it->second};
  }
  Node n;
  n.bound = &param;
  n.needs_grad = record_ && param.requires_grad();
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size() - 1);
  bound_ids_.emplace(&param, id);
  return {this, id};
}

Var Tape::push(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  Node n;
  n.owned = std::move(value);
  if (record_) {
    for (const Var& in : inputs) {
      if (in.tape != this) throw ContractError("op input recorded on a different tape");
      if (nodes_[in.id].needs_grad) {
        n.needs_grad = true;
        break;
      }
    }
    if (n.needs_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

const Tensor& Tape::value(Var v) const {
  const Node& n = nodes_[v.id];
  return n.bound ? *n.bound : n.owned;
}

std::span<double> Tape::grad_of(int id) {
  Node& n = nodes_[id];
  const std::size_t size = n.bound ? n.bound->size() : n.owned.size();
  if (n.grad.size() != size) n.grad.assign(size, 0.0);
  return n.grad;
}

void Tape::backward(Var root) {
  if (!record_) throw ContractError("backward on a tape built with recording disabled");
  if (backward_done_) throw ContractError("backward may only run once per tape");
  if (value(root).size() != 1) {
    throw DimensionError("backward root must be a single element, got " +
                         shape_string(value(root).shape()));
  }
  backward_done_ = true;
  backward_visits_ = 0;
  if (!nodes_[root.id].needs_grad) return;
  grad_of(root.id)[0] += 1.0;
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) continue;
    if (n.backward) {
      n.backward(*this, id);
      ++backward_visits_;
    }
    if (n.bound && n.bound->requires_grad()) {
      auto dst = n.bound->grad();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i];
    }
  }
}

}  // namespace mmembed
