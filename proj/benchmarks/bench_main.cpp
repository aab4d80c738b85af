// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <cmath>

#include "mmembed/eval.hpp"
#include "mmembed/layers.hpp"
#include "mmembed/ops.hpp"
#include "mmembed/rng.hpp"

namespace mmembed {
namespace {

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng = make_rng(1, "bench");
  const Tensor a = normal_tensor({n, n}, 1.0, rng), b = normal_tensor({n, n}, 1.0, rng);
  for (auto _ : state) {
    Tape tape(false);
    benchmark::DoNotOptimize(ops::matmul(tape.constant(a), tape.constant(b)).value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng = make_rng(1, "bench");
  const Tensor a = normal_tensor({n, n}, 1.0, rng), b = normal_tensor({n, n}, 1.0, rng);
  for (auto _ : state) {
    Tape tape;
    const Var y = ops::sum(ops::matmul(tape.leaf(a), tape.leaf(b)));
    tape.backward(y);
    benchmark::DoNotOptimize(tape.grad(y).data());
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(64);

void BM_Attention(benchmark::State& state) {
  const auto seg = static_cast<std::size_t>(state.range(0));
  const std::size_t segments = 16, d = 32;
  Rng rng = make_rng(2, "bench");
  const Tensor q = normal_tensor({segments * seg, d}, 1.0, rng);
  for (auto _ : state) {
    Tape tape(false);
    const Var x = tape.constant(q);
    benchmark::DoNotOptimize(ops::attention(x, x, x, seg, 4, true).value().data().data());
  }
}
BENCHMARK(BM_Attention)->Arg(16)->Arg(32)->Arg(64);

std::vector<PairRecord> bench_corpus(std::size_t per_combo) {
  CorpusSpec spec;
  spec.counts = {per_combo, per_combo, per_combo};
  return gen_corpus(spec);
}

void BM_EmbedText(benchmark::State& state) {
  const Model model(ModelConfig{}, 1);
  const auto corpus = bench_corpus(8);
  const ModalInput& in = corpus.front().target;  // TI_T target: text only
  for (auto _ : state) benchmark::DoNotOptimize(model.embed(in).values.data());
}
BENCHMARK(BM_EmbedText);

void BM_EmbedWithImage(benchmark::State& state) {
  const Model model(ModelConfig{}, 1);
  const auto corpus = bench_corpus(8);
  const ModalInput& in = corpus.front().query;
  for (auto _ : state) benchmark::DoNotOptimize(model.embed(in).values.data());
}
BENCHMARK(BM_EmbedWithImage);

void BM_EmbedBatch(benchmark::State& state) {
  const Model model(ModelConfig{}, 1);
  const auto corpus = bench_corpus(22);
  std::vector<ModalInput> inputs;
  for (const auto& r : corpus) inputs.push_back(r.query);
  for (auto _ : state) benchmark::DoNotOptimize(model.embed_all(inputs).data().data());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(inputs.size()));
}
BENCHMARK(BM_EmbedBatch)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const auto corpus = bench_corpus(64);
  Model model(ModelConfig{}, 1);
  TrainConfig tc;
  tc.steps = 1;
  for (auto _ : state) benchmark::DoNotOptimize(train(model, corpus, tc, LossConfig{}).trace.data());
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_Match(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t d = 32;
  Rng rng = make_rng(3, "bench");
  Tensor e = normal_tensor({n, d}, 1.0, rng);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += e.at(i, k) * e.at(i, k);
    for (std::size_t k = 0; k < d; ++k) e.at(i, k) /= std::sqrt(s);
  }
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  const auto index = CandidateIndex::from_embeddings(e, ids);
  const std::vector<double> q(e.data().begin(), e.data().begin() + d);
  for (auto _ : state) benchmark::DoNotOptimize(match(q, index));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Match)->Arg(50)->Arg(1000)->Arg(10000);

}  // namespace
}  // namespace mmembed

BENCHMARK_MAIN();
