// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmembed/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "mmembed/error.hpp"

namespace mmembed::ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using StridedConst = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using StridedMut = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;

ConstMap as_matrix(const Tensor& t) {
  return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

MutMap as_matrix(std::span<double> buf, std::size_t rows, std::size_t cols) {
  return MutMap(buf.data(), static_cast<Eigen::Index>(rows),
                static_cast<Eigen::Index>(cols));
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

void accumulate(std::span<double> dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Tensor shaped_like(const Tensor& t) { return Tensor(t.shape()); }

// Row-wise log-softmax into `out`; returns nothing, rows are independent.
void log_softmax_into(std::span<const double> x, std::span<double> out,
                      std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    double* yr = out.data() + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += std::exp(xr[c] - mx);
    const double lse = mx + std::log(acc);
    for (std::size_t c = 0; c < cols; ++c) yr[c] = xr[c] - lse;
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank2(A, "matmul");
  require_rank2(B, "matmul");
  if (A.cols() != B.rows()) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_string(A.shape()) +
                         " x " + shape_string(B.shape()));
  }
  const std::size_t m = A.rows(), n = B.cols();
  Tensor out({m, n});
  as_matrix(out.data(), m, n).noalias() = as_matrix(A) * as_matrix(B);
  const Var in[] = {a, b};
  return a.tape->push(std::move(out), in, [a, b, m, n](Tape& t, int self) {
    auto g = ConstMap(t.grad_of(self).data(), m, n);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (t.needs_grad(a)) {
      as_matrix(t.grad_of(a), A.rows(), A.cols()).noalias() += g * as_matrix(B).transpose();
    }
    if (t.needs_grad(b)) {
      as_matrix(t.grad_of(b), B.rows(), B.cols()).noalias() += as_matrix(A).transpose() * g;
    }
  });
}

Var transpose(Var a) {
  const Tensor& A = a.value();
  require_rank2(A, "transpose");
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out({n, m});
  as_matrix(out.data(), n, m) = as_matrix(A).transpose();
  const Var in[] = {a};
  return a.tape->push(std::move(out), in, [a, m, n](Tape& t, int self) {
    auto g = ConstMap(t.grad_of(self).data(), n, m);
    as_matrix(t.grad_of(a), m, n) += g.transpose();
  });
}

Var add(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_same_shape(A, B, "add");
  Tensor out = shaped_like(A);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + B[i];
  const Var in[] = {a, b};
  return a.tape->push(std::move(out), in, [a, b](Tape& t, int self) {
    auto g = t.grad_of(self);
    if (t.needs_grad(a)) accumulate(t.grad_of(a), g);
    if (t.needs_grad(b)) accumulate(t.grad_of(b), g);
  });
}

Var sub(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_same_shape(A, B, "sub");
  Tensor out = shaped_like(A);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] - B[i];
  const Var in[] = {a, b};
  return a.tape->push(std::move(out), in, [a, b](Tape& t, int self) {
    auto g = t.grad_of(self);
    if (t.needs_grad(a)) accumulate(t.grad_of(a), g);
    if (t.needs_grad(b)) {
      auto gb = t.grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_same_shape(A, B, "mul");
  Tensor out = shaped_like(A);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i];
  const Var in[] = {a, b};
  return a.tape->push(std::move(out), in, [a, b](Tape& t, int self) {
    auto g = t.grad_of(self);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (t.needs_grad(a)) {
      auto ga = t.grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
    }
    if (t.needs_grad(b)) {
      auto gb = t.grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
    }
  });
}

Var scale(Var a, double s) {
  const Tensor& A = a.value();
  Tensor out = shaped_like(A);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * s;
  const Var in[] = {a};
  return a.tape->push(std::move(out), in, [a, s](Tape& t, int self) {
    auto g = t.grad_of(self);
    auto ga = t.grad_of(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

Var add_broadcast(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const std::size_t nb = B.size();
  if (A.size() % nb != 0) {
    throw DimensionError("add_broadcast: " + shape_string(B.shape()) + " does not tile " +
                         shape_string(A.shape()));
  }
  Tensor out = shaped_like(A);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + B[i % nb];
  const Var in[] = {a, b};
  return a.tape->push(std::move(out), in, [a, b, nb](Tape& t, int self) {
    auto g = t.grad_of(self);
    if (t.needs_grad(a)) accumulate(t.grad_of(a), g);
    if (t.needs_grad(b)) {
      auto gb = t.grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] += g[i];
    }
  });
}

Var gelu(Var a) {
  const Tensor& A = a.value();
  Tensor out = shaped_like(A);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = A[i];
    out[i] = 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
  }
  const Var in[] = {a};
  return a.tape->push(std::move(out), in, [a](Tape& t, int self) {
    auto g = t.grad_of(self);
    auto ga = t.grad_of(a);
    const Tensor& A = a.value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = A[i];
      const double th = std::tanh(kGeluC * (x + kGeluA * x * x * x));
      const double d = 0.5 * (1.0 + th) +
                       0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
      ga[i] += g[i] * d;
    }
  });
}

Var tanh(Var a) {
  const Tensor& A = a.value();
  Tensor out = shaped_like(A);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(A[i]);
  const Var in[] = {a};
  return a.tape->push(std::move(out), in, [a](Tape& t, int self) {
    auto g = t.grad_of(self);
    auto ga = t.grad_of(a);
    const Tensor& y = t.value(Var{&t, self});
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& X = x.value();
  const std::size_t rows = X.rows(), cols = X.cols();
  if (gamma.value().size() != cols || beta.value().size() != cols) {
    throw DimensionError("layer_norm: gain/bias of size " +
                         std::to_string(gamma.value().size()) + "/" +
                         std::to_string(beta.value().size()) + " for rows of width " +
                         std::to_string(cols));
  }
  Tensor out = shaped_like(X);
  std::vector<double> xhat(X.size());
  std::vector<double> inv_std(rows);
  const Tensor& G = gamma.value();
  const Tensor& Bt = beta.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = X.data().data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t c = 0; c < cols; ++c) {
      const double h = (xr[c] - mu) * inv;
      xhat[r * cols + c] = h;
      out[r * cols + c] = h * G[c] + Bt[c];
    }
  }
  const Var in[] = {x, gamma, beta};
  return x.tape->push(
      std::move(out), in,
      [x, gamma, beta, rows, cols, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Tape& t, int self) {
        auto g = t.grad_of(self);
        const Tensor& G = gamma.value();
        if (t.needs_grad(gamma)) {
          auto gg = t.grad_of(gamma);
          for (std::size_t i = 0; i < g.size(); ++i) gg[i % cols] += g[i] * xhat[i];
        }
        if (t.needs_grad(beta)) {
          auto gb = t.grad_of(beta);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % cols] += g[i];
        }
        if (t.needs_grad(x)) {
          auto gx = t.grad_of(x);
          const double n = static_cast<double>(cols);
          for (std::size_t r = 0; r < rows; ++r) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
              const double dh = g[r * cols + c] * G[c];
              s1 += dh;
              s2 += dh * xhat[r * cols + c];
            }
            for (std::size_t c = 0; c < cols; ++c) {
              const double dh = g[r * cols + c] * G[c];
              gx[r * cols + c] +=
                  inv_std[r] / n * (n * dh - s1 - xhat[r * cols + c] * s2);
            }
          }
        }
      });
}

Var embedding(Var table, std::span<const int> ids) {
  const Tensor& W = table.value();
  require_rank2(W, "embedding");
  const std::size_t d = W.cols();
  std::vector<int> idx(ids.begin(), ids.end());
  for (int id : idx) {
    if (id < 0 || static_cast<std::size_t>(id) >= W.rows()) {
      throw DimensionError("embedding: token id " + std::to_string(id) +
                           " outside table of " + std::to_string(W.rows()) + " rows");
    }
  }
  Tensor out({idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(W.data().data() + static_cast<std::size_t>(idx[i]) * d, d,
                out.data().data() + i * d);
  }
  const Var in[] = {table};
  return table.tape->push(std::move(out), in,
                          [table, d, idx = std::move(idx)](Tape& t, int self) {
                            auto g = t.grad_of(self);
                            auto gw = t.grad_of(table);
                            for (std::size_t i = 0; i < idx.size(); ++i) {
                              double* dst = gw.data() + static_cast<std::size_t>(idx[i]) * d;
                              const double* src = g.data() + i * d;
                              for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
                            }
                          });
}

Var attention(Var q, Var k, Var v, std::size_t seg_len, std::size_t n_heads, bool causal) {
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  require_rank2(Q, "attention");
  require_same_shape(Q, K, "attention");
  require_same_shape(Q, V, "attention");
  const std::size_t rows = Q.rows(), d = Q.cols();
  if (seg_len == 0 || rows % seg_len != 0) {
    throw DimensionError("attention: " + std::to_string(rows) +
                         " rows do not split into segments of " + std::to_string(seg_len));
  }
  if (n_heads == 0 || d % n_heads != 0) {
    throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(n_heads) + " heads");
  }
  const std::size_t hd = d / n_heads;
  const std::size_t n_seg = rows / seg_len;
  const auto T = static_cast<Eigen::Index>(seg_len);
  const auto H = static_cast<Eigen::Index>(hd);
  const double sc = 1.0 / std::sqrt(static_cast<double>(hd));
  // probs[(seg * n_heads + h)] is a T x T block, row-major.
  std::vector<double> probs(n_seg * n_heads * seg_len * seg_len, 0.0);
  Tensor out({rows, d});
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));
  for (std::size_t s = 0; s < n_seg; ++s) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t off = s * seg_len * d + h * hd;
      StridedConst Qs(Q.data().data() + off, T, H, stride);
      StridedConst Ks(K.data().data() + off, T, H, stride);
      StridedConst Vs(V.data().data() + off, T, H, stride);
      MutMap P(probs.data() + (s * n_heads + h) * seg_len * seg_len, T, T);
      P.noalias() = (Qs * Ks.transpose()) * sc;
      for (Eigen::Index i = 0; i < T; ++i) {
        const Eigen::Index lim = causal ? i + 1 : T;
        double mx = P(i, 0);
        for (Eigen::Index j = 1; j < lim; ++j) mx = std::max(mx, P(i, j));
        double acc = 0.0;
        for (Eigen::Index j = 0; j < lim; ++j) {
          P(i, j) = std::exp(P(i, j) - mx);
          acc += P(i, j);
        }
        for (Eigen::Index j = 0; j < lim; ++j) P(i, j) /= acc;
        for (Eigen::Index j = lim; j < T; ++j) P(i, j) = 0.0;
      }
      StridedMut Os(out.data().data() + off, T, H, stride);
      Os.noalias() = P * Vs;
    }
  }
  const Var in[] = {q, k, v};
  return q.tape->push(
      std::move(out), in,
      [q, k, v, seg_len, n_heads, n_seg, hd, d, sc, probs = std::move(probs)](Tape& t,
                                                                              int self) {
        const auto T = static_cast<Eigen::Index>(seg_len);
        const auto H = static_cast<Eigen::Index>(hd);
        const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));
        auto g = t.grad_of(self);
        const Tensor& Q = q.value();
        const Tensor& K = k.value();
        const Tensor& V = v.value();
        const bool gq = t.needs_grad(q), gk = t.needs_grad(k), gv = t.needs_grad(v);
        std::span<double> dq, dk, dv;
        if (gq) dq = t.grad_of(q);
        if (gk) dk = t.grad_of(k);
        if (gv) dv = t.grad_of(v);
        RowMat dP(T, T), dS(T, T);
        for (std::size_t s = 0; s < n_seg; ++s) {
          for (std::size_t h = 0; h < n_heads; ++h) {
            const std::size_t off = s * seg_len * d + h * hd;
            ConstMap P(probs.data() + (s * n_heads + h) * seg_len * seg_len, T, T);
            StridedConst dO(g.data() + off, T, H, stride);
            StridedConst Vs(V.data().data() + off, T, H, stride);
            if (gv) {
              StridedMut dVs(dv.data() + off, T, H, stride);
              dVs.noalias() += P.transpose() * dO;
            }
            if (!gq && !gk) continue;
            dP.noalias() = dO * Vs.transpose();
            for (Eigen::Index i = 0; i < T; ++i) {
              double dot = 0.0;
              for (Eigen::Index j = 0; j < T; ++j) dot += dP(i, j) * P(i, j);
              for (Eigen::Index j = 0; j < T; ++j) dS(i, j) = P(i, j) * (dP(i, j) - dot) * sc;
            }
            if (gq) {
              StridedConst Ks(K.data().data() + off, T, H, stride);
              StridedMut dQs(dq.data() + off, T, H, stride);
              dQs.noalias() += dS * Ks;
            }
            if (gk) {
              StridedConst Qs(Q.data().data() + off, T, H, stride);
              StridedMut dKs(dk.data() + off, T, H, stride);
              dKs.noalias() += dS.transpose() * Qs;
            }
          }
        }
      });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t cols = parts[0].value().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    const Tensor& P = p.value();
    if (P.cols() != cols) {
      throw DimensionError("concat_rows: width mismatch " + shape_string(parts[0].shape()) +
                           " vs " + shape_string(P.shape()));
    }
    rows += P.rows();
  }
  Tensor out({rows, cols});
  std::size_t at = 0;
  std::vector<Var> inputs(parts.begin(), parts.end());
  for (const Var& p : inputs) {
    const Tensor& P = p.value();
    std::copy(P.data().begin(), P.data().end(), out.data().begin() + static_cast<long>(at));
    at += P.size();
  }
  Tape* tape = parts[0].tape;
  return tape->push(std::move(out), inputs, [inputs](Tape& t, int self) {
    auto g = t.grad_of(self);
    std::size_t at = 0;
    for (const Var& p : inputs) {
      const std::size_t n = p.value().size();
      if (t.needs_grad(p)) accumulate(t.grad_of(p), g.subspan(at, n));
      at += n;
    }
  });
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
  const Tensor& X = x.value();
  const std::size_t cols = X.cols();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Tensor out({idx.size(), cols});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= X.rows()) {
      throw DimensionError("gather_rows: row " + std::to_string(idx[i]) + " of " +
                           shape_string(X.shape()));
    }
    std::copy_n(X.data().data() + idx[i] * cols, cols, out.data().data() + i * cols);
  }
  const Var in[] = {x};
  return x.tape->push(std::move(out), in, [x, cols, idx = std::move(idx)](Tape& t, int self) {
    auto g = t.grad_of(self);
    auto gx = t.grad_of(x);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t c = 0; c < cols; ++c) gx[idx[i] * cols + c] += g[i * cols + c];
    }
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t count) {
  const Tensor& X = x.value();
  require_rank2(X, "slice_cols");
  const std::size_t rows = X.rows(), cols = X.cols();
  if (count == 0 || begin + count > cols) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + shape_string(X.shape()));
  }
  Tensor out({rows, count});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(X.data().data() + r * cols + begin, count, out.data().data() + r * count);
  }
  const Var in[] = {x};
  return x.tape->push(std::move(out), in, [x, rows, cols, begin, count](Tape& t, int self) {
    auto g = t.grad_of(self);
    auto gx = t.grad_of(x);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < count; ++c) gx[r * cols + begin + c] += g[r * count + c];
    }
  });
}

Var segment_left_matmul(Var m, Var x, std::size_t in_len) {
  const Tensor& M = m.value();
  const Tensor& X = x.value();
  require_rank2(M, "segment_left_matmul");
  require_rank2(X, "segment_left_matmul");
  if (M.cols() != in_len || in_len == 0 || X.rows() % in_len != 0) {
    throw DimensionError("segment_left_matmul: " + shape_string(M.shape()) +
                         " cannot pool segments of " + std::to_string(in_len) + " rows from " +
                         shape_string(X.shape()));
  }
  const std::size_t out_len = M.rows(), d = X.cols(), n_seg = X.rows() / in_len;
  Tensor out({n_seg * out_len, d});
  const auto Mm = as_matrix(M);
  for (std::size_t s = 0; s < n_seg; ++s) {
    ConstMap Xs(X.data().data() + s * in_len * d, in_len, d);
    MutMap Os(out.data().data() + s * out_len * d, out_len, d);
    Os.noalias() = Mm * Xs;
  }
  const Var in[] = {m, x};
  return m.tape->push(std::move(out), in, [m, x, in_len, out_len, d, n_seg](Tape& t, int self) {
    auto g = t.grad_of(self);
    const Tensor& M = m.value();
    const Tensor& X = x.value();
    for (std::size_t s = 0; s < n_seg; ++s) {
      ConstMap Gs(g.data() + s * out_len * d, out_len, d);
      if (t.needs_grad(m)) {
        ConstMap Xs(X.data().data() + s * in_len * d, in_len, d);
        as_matrix(t.grad_of(m), out_len, in_len).noalias() += Gs * Xs.transpose();
      }
      if (t.needs_grad(x)) {
        MutMap dXs(t.grad_of(x).data() + s * in_len * d, in_len, d);
        dXs.noalias() += as_matrix(M).transpose() * Gs;
      }
    }
  });
}

Var l2_normalize_rows(Var x) {
  const Tensor& X = x.value();
  const std::size_t rows = X.rows(), cols = X.cols();
  Tensor out = shaped_like(X);
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += X[r * cols + c] * X[r * cols + c];
    const double n = std::sqrt(acc);
    if (!(n > 0.0)) {
      throw DegenerateInputError("l2_normalize_rows: row " + std::to_string(r) + " has norm " +
                                 std::to_string(n));
    }
    norms[r] = n;
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = X[r * cols + c] / n;
  }
  const Var in[] = {x};
  return x.tape->push(std::move(out), in,
                      [x, rows, cols, norms = std::move(norms)](Tape& t, int self) {
                        auto g = t.grad_of(self);
                        auto gx = t.grad_of(x);
                        const Tensor& Y = t.value(Var{&t, self});
                        for (std::size_t r = 0; r < rows; ++r) {
                          double dot = 0.0;
                          for (std::size_t c = 0; c < cols; ++c) {
                            dot += Y[r * cols + c] * g[r * cols + c];
                          }
                          for (std::size_t c = 0; c < cols; ++c) {
                            gx[r * cols + c] +=
                                (g[r * cols + c] - Y[r * cols + c] * dot) / norms[r];
                          }
                        }
                      });
}

Var softmax_rows(Var x) {
  const Tensor& X = x.value();
  const std::size_t rows = X.rows(), cols = X.cols();
  Tensor out = shaped_like(X);
  log_softmax_into(X.data(), out.data(), rows, cols);
  for (auto& v : out.data()) v = std::exp(v);
  const Var in[] = {x};
  return x.tape->push(std::move(out), in, [x, rows, cols](Tape& t, int self) {
    auto g = t.grad_of(self);
    auto gx = t.grad_of(x);
    const Tensor& Y = t.value(Var{&t, self});
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * Y[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        gx[r * cols + c] += Y[r * cols + c] * (g[r * cols + c] - dot);
      }
    }
  });
}

Var log_softmax_rows(Var x) {
  const Tensor& X = x.value();
  const std::size_t rows = X.rows(), cols = X.cols();
  Tensor out = shaped_like(X);
  log_softmax_into(X.data(), out.data(), rows, cols);
  const Var in[] = {x};
  return x.tape->push(std::move(out), in, [x, rows, cols](Tape& t, int self) {
    auto g = t.grad_of(self);
    auto gx = t.grad_of(x);
    const Tensor& Y = t.value(Var{&t, self});
    for (std::size_t r = 0; r < rows; ++r) {
      double gs = 0.0;
      for (std::size_t c = 0; c < cols; ++c) gs += g[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        gx[r * cols + c] += g[r * cols + c] - std::exp(Y[r * cols + c]) * gs;
      }
    }
  });
}

Var row_sum(Var x) {
  const Tensor& X = x.value();
  const std::size_t rows = X.rows(), cols = X.cols();
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += X[r * cols + c];
    out[r] = acc;
  }
  const Var in[] = {x};
  return x.tape->push(std::move(out), in, [x, rows, cols](Tape& t, int self) {
    auto g = t.grad_of(self);
    auto gx = t.grad_of(x);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[r];
    }
  });
}

Var sum(Var x) {
  const Tensor& X = x.value();
  double acc = 0.0;
  for (double v : X.data()) acc += v;
  const Var in[] = {x};
  return x.tape->push(Tensor::scalar(acc), in, [x](Tape& t, int self) {
    const double g = t.grad_of(self)[0];
    for (auto& v : t.grad_of(x)) v += g;
  });
}

Var mean(Var x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

Var take(Var x, std::span<const std::size_t> indices) {
  const Tensor& X = x.value();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  if (idx.empty()) throw ContractError("take: no indices");
  Tensor out({idx.size()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= X.size()) {
      throw DimensionError("take: index " + std::to_string(idx[i]) + " outside " +
                           shape_string(X.shape()));
    }
    out[i] = X[idx[i]];
  }
  const Var in[] = {x};
  return x.tape->push(std::move(out), in, [x, idx = std::move(idx)](Tape& t, int self) {
    auto g = t.grad_of(self);
    auto gx = t.grad_of(x);
    for (std::size_t i = 0; i < idx.size(); ++i) gx[idx[i]] += g[i];
  });
}

Var stop_gradient(Var x) { return x.tape->constant(x.value()); }

Var softmax_cross_entropy_rows(Var logits, Var targets) {
  const Tensor& L = logits.value();
  const Tensor& P = targets.value();
  require_same_shape(L, P, "softmax_cross_entropy");
  const std::size_t rows = L.rows(), cols = L.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double p = P[r * cols + c];
      if (!(p >= 0.0)) {
        throw ContractError("softmax_cross_entropy: target entry " + std::to_string(p) +
                            " is negative or not finite");
      }
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw ContractError("softmax_cross_entropy: target distribution sums to " +
                          std::to_string(total) + ", expected 1");
    }
  }
  std::vector<double> logp(L.size());
  log_softmax_into(L.data(), logp, rows, cols);
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double h = 0.0;
    for (std::size_t c = 0; c < cols; ++c) h -= P[r * cols + c] * logp[r * cols + c];
    out[r] = h;
  }
  const Var in[] = {logits, targets};
  return logits.tape->push(
      std::move(out), in,
      [logits, targets, rows, cols, logp = std::move(logp)](Tape& t, int self) {
        auto g = t.grad_of(self);
        const Tensor& P = targets.value();
        if (t.needs_grad(logits)) {
          auto gl = t.grad_of(logits);
          for (std::size_t r = 0; r < rows; ++r) {
            double mass = 0.0;
            for (std::size_t c = 0; c < cols; ++c) mass += P[r * cols + c];
            for (std::size_t c = 0; c < cols; ++c) {
              const std::size_t i = r * cols + c;
              gl[i] += g[r] * (std::exp(logp[i]) * mass - P[i]);
            }
          }
        }
        if (t.needs_grad(targets)) {
          auto gp = t.grad_of(targets);
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] -= g[i / cols] * logp[i];
        }
      });
}

Var softmax_cross_entropy(Var logits, Var targets) {
  const Tensor& L = logits.value();
  const Tensor& P = targets.value();
  require_same_shape(L, P, "softmax_cross_entropy");
  if (L.rank() > 1 && L.rows() != 1) {
    throw DimensionError("softmax_cross_entropy expects a vector, got " + shape_string(L.shape()));
  }
  Tape& tape = *logits.tape;
  // View both as a single row; rows() of a rank-1 tensor is its length.
  const std::size_t n = L.size();
  auto as_row = [&tape, n](Var v) {
    const Var in[] = {v};
    Tensor row({1, n}, std::vector<double>(v.value().data().begin(), v.value().data().end()));
    return tape.push(std::move(row), in, [v](Tape& t, int self) {
      accumulate(t.grad_of(v), t.grad_of(self));
    });
  };
  return sum(softmax_cross_entropy_rows(as_row(logits), as_row(targets)));
}

Var cosine_similarity(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.size() != B.size()) {
    throw DimensionError("cosine_similarity: " + shape_string(A.shape()) + " vs " +
                         shape_string(B.shape()));
  }
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) {
    ab += A[i] * B[i];
    aa += A[i] * A[i];
    bb += B[i] * B[i];
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  if (!(na > 0.0) || !(nb > 0.0)) {
    throw DegenerateInputError("cosine_similarity: zero-norm input");
  }
  const double cs = std::clamp(ab / (na * nb), -1.0, 1.0);
  const Var in[] = {a, b};
  return a.tape->push(Tensor::scalar(cs), in, [a, b, na, nb, ab](Tape& t, int self) {
    const double g = t.grad_of(self)[0];
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    const double c = ab / (na * nb);
    if (t.needs_grad(a)) {
      auto ga = t.grad_of(a);
      for (std::size_t i = 0; i < ga.size(); ++i) {
        ga[i] += g * (B[i] / (na * nb) - c * A[i] / (na * na));
      }
    }
    if (t.needs_grad(b)) {
      auto gb = t.grad_of(b);
      for (std::size_t i = 0; i < gb.size(); ++i) {
        gb[i] += g * (A[i] / (na * nb) - c * B[i] / (nb * nb));
      }
    }
  });
}

}  // namespace mmembed::ops
