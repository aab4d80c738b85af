// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmembed/layers.hpp"

#include <cmath>
#include <numeric>

#include "mmembed/error.hpp"
#include "mmembed/ops.hpp"

namespace mmembed {

Tensor normal_tensor(Shape shape, double sd, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, sd);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, double init_scale)
    : weight(normal_tensor({in, out}, init_scale / std::sqrt(static_cast<double>(in)), rng)),
      bias(Tensor({out})) {}

Var Linear::forward(Tape& tape, Var x) const {
  Var y = ops::add_broadcast(ops::matmul(x, bind_param(tape, weight)), bind_param(tape, bias));
  if (!has_adapter()) return y;
  Var down = ops::matmul(x, ops::transpose(bind_param(tape, lora_a)));
  Var up = ops::matmul(down, ops::transpose(bind_param(tape, lora_b)));
  return ops::add(y, ops::scale(up, adapter_scale));
}

void Linear::attach_adapter(std::size_t rank, double scale, Rng& rng) {
  const std::size_t in = in_features(), out = out_features();
  if (rank == 0 || rank > std::min(in, out)) {
    throw ConfigError("adapter rank " + std::to_string(rank) + " invalid for a " +
                      std::to_string(in) + "x" + std::to_string(out) + " layer");
  }
  lora_a = normal_tensor({rank, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  lora_b = Tensor({out, rank});
  adapter_rank = rank;
  adapter_scale = scale;
}

void Linear::merge_adapter() {
  if (!has_adapter()) return;
  const std::size_t in = in_features(), out = out_features(), r = adapter_rank;
  for (std::size_t i = 0; i < in; ++i) {
    for (std::size_t o = 0; o < out; ++o) {
      double acc = 0.0;
      for (std::size_t k = 0; k < r; ++k) acc += lora_b.at(o, k) * lora_a.at(k, i);
      weight.at(i, o) += adapter_scale * acc;
    }
  }
  lora_a = Tensor();
  lora_b = Tensor();
  adapter_rank = 0;
}

void Linear::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".weight", weight);
  fn(prefix + ".bias", bias);
  if (has_adapter()) {
    fn(prefix + ".lora_a", lora_a);
    fn(prefix + ".lora_b", lora_b);
  }
}

LayerNorm::LayerNorm(std::size_t dim) : gain(Tensor({dim})), bias(Tensor({dim})) {
  for (auto& g : gain.data()) g = 1.0;
}

Var LayerNorm::forward(Tape& tape, Var x) const {
  return ops::layer_norm(x, bind_param(tape, gain), bind_param(tape, bias));
}

void LayerNorm::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".gain", gain);
  fn(prefix + ".bias", bias);
}

TransformerBlock::TransformerBlock(std::size_t d_model, std::size_t heads, std::size_t mlp_hidden,
                                   bool is_causal, Rng& rng)
    : ln1(d_model),
      ln2(d_model),
      qkv(d_model, 3 * d_model, rng),
      out(d_model, d_model, rng, 0.5),
      fc1(d_model, mlp_hidden, rng),
      fc2(mlp_hidden, d_model, rng, 0.5),
      n_heads(heads),
      causal(is_causal) {}

Var TransformerBlock::forward(Tape& tape, Var x, std::size_t seg_len) const {
  const std::size_t d = x.value().cols();
  Var h = qkv.forward(tape, ln1.forward(tape, x));
  Var a = ops::attention(ops::slice_cols(h, 0, d), ops::slice_cols(h, d, d),
                         ops::slice_cols(h, 2 * d, d), seg_len, n_heads, causal);
  x = ops::add(x, out.forward(tape, a));
  Var m = fc2.forward(tape, ops::gelu(fc1.forward(tape, ln2.forward(tape, x))));
  return ops::add(x, m);
}

void TransformerBlock::visit(const std::string& prefix, const ParamVisitor& fn) {
  ln1.visit(prefix + ".ln1", fn);
  qkv.visit(prefix + ".attn.qkv", fn);
  out.visit(prefix + ".attn.out", fn);
  ln2.visit(prefix + ".ln2", fn);
  fc1.visit(prefix + ".mlp.fc1", fn);
  fc2.visit(prefix + ".mlp.fc2", fn);
}

void TransformerBlock::for_each_linear(const std::function<void(Linear&)>& fn) {
  fn(qkv);
  fn(out);
  fn(fc1);
  fn(fc2);
}

Var positions(Tape& tape, const Tensor& table, std::size_t count) {
  if (count > table.rows()) {
    throw DimensionError("sequence of " + std::to_string(count) + " positions exceeds table of " +
                         std::to_string(table.rows()));
  }
  std::vector<std::size_t> rows(count);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return ops::gather_rows(bind_param(tape, table), rows);
}

}  // namespace mmembed
