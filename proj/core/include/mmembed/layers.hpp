// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "mmembed/autodiff.hpp"
#include "mmembed/rng.hpp"

namespace mmembed {

/// Name + storage of one trainable tensor. Names are stable and used as
/// checkpoint keys.
struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

using ParamVisitor = std::function<void(const std::string& name, Tensor& t)>;

/// Binds a parameter so that gradients flow when the tape records.
/// Inference tapes only read the value, so const models are safe to share.
inline Var bind_param(Tape& tape, const Tensor& p) {
  return tape.bind(const_cast<Tensor&>(p));
}

/// y = x W + b, optionally plus a low-rank update s * (x A^T) B^T.
/// W is stored [in, out]; the adapter follows the usual A: [r, in],
/// B: [out, r] layout so that the effective weight is W + s * (B A)^T.
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, double init_scale = 1.0);

  Var forward(Tape& tape, Var x) const;

  std::size_t in_features() const { return weight.shape()[0]; }
  std::size_t out_features() const { return weight.shape()[1]; }

  bool has_adapter() const { return adapter_rank > 0; }
  /// Attaches a rank-`rank` adapter: A ~ N(0, 1/in), B = 0. Any rank up to
  /// min(in, out) is accepted here; policy limits live in the caller.
  void attach_adapter(std::size_t rank, double scale, Rng& rng);
  /// Folds the adapter into W (W += s (B A)^T) and removes it.
  void merge_adapter();

  void visit(const std::string& prefix, const ParamVisitor& fn);

  Tensor weight;
  Tensor bias;
  Tensor lora_a;
  Tensor lora_b;
  std::size_t adapter_rank = 0;
  double adapter_scale = 1.0;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim);
  Var forward(Tape& tape, Var x) const;
  void visit(const std::string& prefix, const ParamVisitor& fn);

  Tensor gain;
  Tensor bias;
};

/// Pre-norm transformer block: x + Attn(LN(x)), then x + MLP(LN(x)).
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(std::size_t d_model, std::size_t n_heads, std::size_t mlp_hidden, bool causal,
                   Rng& rng);

  /// x: [n_seq * seg_len, d_model]; attention never crosses segments.
  Var forward(Tape& tape, Var x, std::size_t seg_len) const;
  void visit(const std::string& prefix, const ParamVisitor& fn);
  void for_each_linear(const std::function<void(Linear&)>& fn);

  LayerNorm ln1, ln2;
  Linear qkv, out, fc1, fc2;
  std::size_t n_heads = 1;
  bool causal = true;
};

/// Returns rows [0, count) of a positional table as a tape value.
Var positions(Tape& tape, const Tensor& table, std::size_t count);

Tensor normal_tensor(Shape shape, double sd, Rng& rng);

}  // namespace mmembed
