// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmembed/gradcheck_suite.hpp"

#include <algorithm>
#include <chrono>

#include "mmembed/error.hpp"
#include "mmembed/ops.hpp"
#include "mmembed/training.hpp"

namespace mmembed {
namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

using Inputs = std::vector<Tensor>;

auto mat(std::size_t r, std::size_t c) {
  return [r, c](std::mt19937_64& rng, std::size_t k) { return Inputs{random_tensor({r + k, c + k}, rng)}; };
}

auto pair(std::size_t r, std::size_t c) {
  return [r, c](std::mt19937_64& rng, std::size_t k) {
    return Inputs{random_tensor({r + k, c}, rng), random_tensor({r + k, c}, rng)};
  };
}

std::vector<OpCase> build_cases() {
  std::vector<OpCase> cases = {
      {"matmul",
       [](std::mt19937_64& rng, std::size_t k) {
         return Inputs{random_tensor({3 + k, 4}, rng), random_tensor({4, 2 + k}, rng)};
       },
       [](Tape&, std::span<const Var> v) { return ops::matmul(v[0], v[1]); }},
      {"add", pair(2, 3), [](Tape&, std::span<const Var> v) { return ops::add(v[0], v[1]); }},
      {"sub", pair(2, 3), [](Tape&, std::span<const Var> v) { return ops::sub(v[0], v[1]); }},
      {"mul", pair(2, 4), [](Tape&, std::span<const Var> v) { return ops::mul(v[0], v[1]); }},
      {"scale", mat(2, 3), [](Tape&, std::span<const Var> v) { return ops::scale(v[0], -1.7); }},
      {"add_broadcast",
       [](std::mt19937_64& rng, std::size_t k) {
         return Inputs{random_tensor({6, 2 + k}, rng), random_tensor({2 + k}, rng)};
       },
       [](Tape&, std::span<const Var> v) { return ops::add_broadcast(v[0], v[1]); }},
      {"layer_norm",
       [](std::mt19937_64& rng, std::size_t k) {
         return Inputs{random_tensor({1 + k, 8}, rng), random_tensor({8}, rng), random_tensor({8}, rng)};
       },
       [](Tape&, std::span<const Var> v) { return ops::layer_norm(v[0], v[1], v[2]); }},
      {"gelu", mat(3, 4), [](Tape&, std::span<const Var> v) { return ops::gelu(v[0]); }},
      {"tanh", mat(3, 4), [](Tape&, std::span<const Var> v) { return ops::tanh(v[0]); }},
      {"embedding",
       [](std::mt19937_64& rng, std::size_t k) { return Inputs{random_tensor({5 + k, 4}, rng)}; },
       [](Tape&, std::span<const Var> v) {
         const int ids[] = {0, 3, 3, 1, 4};
         return ops::embedding(v[0], ids);
       }},
      {"causal_attention",
       [](std::mt19937_64& rng, std::size_t k) {
         const std::size_t rows = 2 * (3 + k);
         return Inputs{random_tensor({rows, 4}, rng), random_tensor({rows, 4}, rng),
                       random_tensor({rows, 4}, rng)};
       },
       [](Tape&, std::span<const Var> v) {
         return ops::attention(v[0], v[1], v[2], v[0].value().rows() / 2, 2, true);
       }},
      {"bidirectional_attention",
       [](std::mt19937_64& rng, std::size_t k) {
         const std::size_t rows = 3 * (2 + k);
         return Inputs{random_tensor({rows, 6}, rng), random_tensor({rows, 6}, rng),
                       random_tensor({rows, 6}, rng)};
       },
       [](Tape&, std::span<const Var> v) {
         return ops::attention(v[0], v[1], v[2], v[0].value().rows() / 3, 3, false);
       }},
      {"concat_rows",
       [](std::mt19937_64& rng, std::size_t k) {
         return Inputs{random_tensor({1 + k, 3}, rng), random_tensor({2, 3}, rng)};
       },
       [](Tape&, std::span<const Var> v) { return ops::concat_rows(v); }},
      {"gather_rows", mat(4, 3),
       [](Tape&, std::span<const Var> v) {
         const std::size_t rows[] = {3, 0, 0, 2};
         return ops::gather_rows(v[0], rows);
       }},
      {"slice_cols", mat(3, 5), [](Tape&, std::span<const Var> v) { return ops::slice_cols(v[0], 1, 3); }},
      {"segment_left_matmul",
       [](std::mt19937_64& rng, std::size_t k) {
         return Inputs{random_tensor({2 + k, 4}, rng), random_tensor({8, 3}, rng)};
       },
       [](Tape&, std::span<const Var> v) { return ops::segment_left_matmul(v[0], v[1], 4); }},
      {"l2_normalize_rows", mat(3, 5), [](Tape&, std::span<const Var> v) { return ops::l2_normalize_rows(v[0]); }},
      {"softmax_rows", mat(2, 5), [](Tape&, std::span<const Var> v) { return ops::softmax_rows(v[0]); }},
      {"log_softmax_rows", mat(2, 5), [](Tape&, std::span<const Var> v) { return ops::log_softmax_rows(v[0]); }},
      {"transpose", mat(2, 3), [](Tape&, std::span<const Var> v) { return ops::transpose(v[0]); }},
      {"row_sum", mat(3, 2), [](Tape&, std::span<const Var> v) { return ops::row_sum(v[0]); }},
      {"sum", mat(3, 3), [](Tape&, std::span<const Var> v) { return ops::sum(v[0]); }},
      {"mean", mat(3, 3), [](Tape&, std::span<const Var> v) { return ops::mean(v[0]); }},
      {"take", mat(3, 3),
       [](Tape&, std::span<const Var> v) {
         const std::size_t idx[] = {0, 4, 4, 8};
         return ops::take(v[0], idx);
       }},
      // Targets pass through softmax so they stay distributions under perturbation.
      {"softmax_cross_entropy",
       [](std::mt19937_64& rng, std::size_t k) {
         return Inputs{random_tensor({1, 6 + k}, rng), random_tensor({1, 6 + k}, rng)};
       },
       [](Tape&, std::span<const Var> v) {
         return ops::softmax_cross_entropy(v[0], ops::softmax_rows(v[1]));
       }},
      {"softmax_cross_entropy_rows", pair(2, 6),
       [](Tape&, std::span<const Var> v) {
         return ops::softmax_cross_entropy_rows(v[0], ops::softmax_rows(v[1]));
       }},
      {"cosine_similarity",
       [](std::mt19937_64& rng, std::size_t k) {
         return Inputs{random_tensor({4 + k}, rng), random_tensor({4 + k}, rng)};
       },
       [](Tape&, std::span<const Var> v) { return ops::cosine_similarity(v[0], v[1]); }},
  };
  return cases;
}

GradCheckReport pipeline_check(std::uint64_t seed, const GradCheckSuiteOptions& o, bool fault) {
  CorpusSpec spec;
  spec.seed = seed;
  spec.counts = {4, 4, 4};
  const auto corpus = gen_corpus(spec);
  ModelConfig mc;
  mc.d_model = 8;
  mc.n_layers = 2;
  mc.t2i_layers = 2;
  Model model(mc, seed);
  model.set_trainable(true);
  std::vector<const PairRecord*> batch;
  for (const auto& r : corpus) batch.push_back(&r);
  LossConfig loss;
  loss.tau = 0.5;
  // The stop-gradient teacher makes the analytic gradient differ from the
  // true derivative on purpose.
  loss.stop_grad_target = false;

  std::vector<Tensor*> params;
  for (const auto& p : model.parameters()) params.push_back(p.tensor);
  GradCheckOptions go;
  go.epsilon = o.epsilon;
  go.tolerance = o.pipeline_tolerance;
  go.max_coords_per_tensor = 4;
  go.seed = seed;
  auto r = grad_check(
      [&](Tape& tape) {
        Var total = batch_loss(tape, model, batch, loss).total;
        return fault ? sign_flip_backward(tape, total) : total;
      },
      params, go);
  if (!r.passed && r.worst_tensor < params.size()) {
    r.message += " (" + model.parameters()[r.worst_tensor].name + ")";
  }
  return r;
}

}  // namespace

Var sign_flip_backward(Tape& tape, Var x) {
  const Var in[] = {x};
  return tape.push(x.value(), in, [x](Tape& t, int self) {
    auto g = t.grad_of(self);
    auto gx = t.grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] -= g[i];
  });
}

const std::vector<OpCase>& registered_op_cases() {
  static const std::vector<OpCase> cases = build_cases();
  return cases;
}

GradCheckSuiteResult run_gradcheck_suite(const GradCheckSuiteOptions& options) {
  const auto& cases = registered_op_cases();
  if (!options.inject_fault.empty() && options.inject_fault != kPipelineCheckName &&
      std::none_of(cases.begin(), cases.end(), [&](const OpCase& c) { return c.name == options.inject_fault; })) {
    throw ConfigError("unknown gradcheck target '" + options.inject_fault + "'");
  }
  const auto t0 = std::chrono::steady_clock::now();
  GradCheckSuiteResult result;
  for (std::uint64_t seed : options.seeds) {
    std::mt19937_64 rng(seed * 7919 + 1);
    for (const auto& c : cases) {
      const bool fault = c.name == options.inject_fault;
      OpUnderTest op = c.op;
      if (fault) {
        op = [&c](Tape& tape, std::span<const Var> v) { return sign_flip_backward(tape, c.op(tape, v)); };
      }
      for (std::size_t k = 0; k < options.shapes_per_op; ++k) {
        GradCheckOptions go;
        go.epsilon = options.epsilon;
        go.tolerance = options.op_tolerance;
        auto r = grad_check(op, c.inputs(rng, k), go);
        r.name = c.name + " seed=" + std::to_string(seed) + " shape=" + std::to_string(k);
        result.passed = result.passed && r.passed;
        result.reports.push_back(std::move(r));
      }
    }
    if (options.include_pipeline) {
      auto r = pipeline_check(seed, options, options.inject_fault == kPipelineCheckName);
      r.name = std::string(kPipelineCheckName) + " seed=" + std::to_string(seed);
      result.passed = result.passed && r.passed;
      result.reports.push_back(std::move(r));
    }
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace mmembed
