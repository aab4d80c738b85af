// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mmembed/autodiff.hpp"

// Differentiable ops on Tape values. Matrices are rank-2 row-major tensors;
// "rows" ops act independently on each row of `shape[0] x cols`.
namespace mmembed::ops {

Var matmul(Var a, Var b);             // [m,k] x [k,n] -> [m,n]
Var transpose(Var a);                 // [m,n] -> [n,m]
Var add(Var a, Var b);                // same shape
Var sub(Var a, Var b);                // same shape
Var mul(Var a, Var b);                // elementwise, same shape
Var scale(Var a, double s);
/// a + tile(b): b's element count must divide a's; b repeats along a's
/// leading elements (bias over rows, positional table over segments).
Var add_broadcast(Var a, Var b);
Var gelu(Var a);                      // tanh approximation
Var tanh(Var a);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
/// Row lookup: table [n_vocab, d], ids -> [ids.size(), d].
Var embedding(Var table, std::span<const int> ids);
/// Multi-head scaled dot-product self-attention over consecutive segments of
/// `seg_len` rows. q, k, v: [n_seg * seg_len, d]. No mixing across segments.
Var attention(Var q, Var k, Var v, std::size_t seg_len, std::size_t n_heads,
              bool causal);
Var concat_rows(std::span<const Var> parts);
Var gather_rows(Var x, std::span<const std::size_t> rows);
/// Column slice [begin, begin+count) of a matrix.
Var slice_cols(Var x, std::size_t begin, std::size_t count);
/// Per segment of `in_len` rows, left-multiplies by `m` [out_len, in_len].
Var segment_left_matmul(Var m, Var x, std::size_t in_len);
Var l2_normalize_rows(Var x);
Var softmax_rows(Var x);
Var log_softmax_rows(Var x);
Var row_sum(Var x);                   // [r,c] -> [r]
Var sum(Var x);                       // -> scalar
Var mean(Var x);                      // -> scalar
/// Flat-index gather -> [indices.size()].
Var take(Var x, std::span<const std::size_t> indices);
Var stop_gradient(Var x);

/// H = -sum_i target[i] * log softmax(logits)[i]. Max-subtraction
/// stabilized. `target` must be a distribution (nonnegative, sum 1 +- 1e-9).
Var softmax_cross_entropy(Var logits, Var target);
/// Row-wise softmax_cross_entropy: [r,c] x [r,c] -> [r].
Var softmax_cross_entropy_rows(Var logits, Var targets);

/// a.b / (|a| |b|); throws DegenerateInputError on a zero-norm input.
Var cosine_similarity(Var a, Var b);

}  // namespace mmembed::ops
