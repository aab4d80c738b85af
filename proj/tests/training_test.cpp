// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "mmembed/error.hpp"
#include "mmembed/grad_check.hpp"
#include "mmembed/ops.hpp"
#include "mmembed/training.hpp"

namespace mmembed {
namespace {

Tensor unit_rows(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t({rows, cols});
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += (t.at(i, j) = n(rng)) * t.at(i, j);
    for (std::size_t j = 0; j < cols; ++j) t.at(i, j) /= std::sqrt(s);
  }
  return t;
}

// In-batch InfoNCE evaluated term by term.
double info_nce_oracle(const Tensor& q, const Tensor& c, double tau) {
  const std::size_t b = q.rows(), d = q.cols();
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double denom = 0.0, pos = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += q.at(i, k) * c.at(j, k);
      denom += std::exp(s / tau);
      if (i == j) pos = std::exp(s / tau);
    }
    total -= std::log(pos / denom);
  }
  return total / static_cast<double>(b);
}

double info_nce_value(const Tensor& q, const Tensor& c, double tau) {
  Tape tape(false);
  return info_nce(tape.constant(q), tape.constant(c), tau).value().item();
}

std::vector<PairRecord> corpus(std::array<std::size_t, 3> counts, std::uint64_t seed = 7) {
  CorpusSpec spec;
  spec.seed = seed;
  spec.counts = counts;
  return gen_corpus(spec);
}

std::vector<const PairRecord*> pointers(const std::vector<PairRecord>& records) {
  std::vector<const PairRecord*> out;
  for (const auto& r : records) out.push_back(&r);
  return out;
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.d_model = 16;
  c.n_layers = 1;
  c.t2i_layers = 1;
  return c;
}

TEST(InfoNceTest, SingleItemBatchIsExactlyZero) {
  std::mt19937_64 rng(1);
  EXPECT_EQ(info_nce_value(unit_rows(1, 8, rng), unit_rows(1, 8, rng), 0.02), 0.0);
}

TEST(InfoNceTest, OrthonormalPairClosedForm) {
  const Tensor e = Tensor::matrix(2, 2, {1, 0, 0, 1});
  EXPECT_NEAR(info_nce_value(e, e, 1.0), std::log(1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(info_nce_value(e, e, 1.0), 0.3133, 1e-4);
}

TEST(InfoNceTest, MatchesDirectFormula) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor q = unit_rows(4, 6, rng), c = unit_rows(4, 6, rng);
    for (double tau : {0.02, 0.1, 1.0}) {
      EXPECT_NEAR(info_nce_value(q, c, tau), info_nce_oracle(q, c, tau), 1e-9);
    }
  }
}

TEST(InfoNceTest, NonnegativeAndPermutationInvariant) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor q = unit_rows(6, 5, rng), c = unit_rows(6, 5, rng);
    std::vector<std::size_t> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor qp({6, 5}), cp({6, 5});
    for (std::size_t i = 0; i < 6; ++i) {
      for (std::size_t k = 0; k < 5; ++k) {
        qp.at(i, k) = q.at(perm[i], k);
        cp.at(i, k) = c.at(perm[i], k);
      }
    }
    const double v = info_nce_value(q, c, 0.05);
    EXPECT_GE(v, 0.0);
    EXPECT_NEAR(info_nce_value(qp, cp, 0.05), v, 1e-12);
  }
}

TEST(InfoNceTest, RejectsNonUnitRows) {
  const Tensor bad = Tensor::matrix(2, 2, {1.01, 0, 0, 1});
  const Tensor good = Tensor::matrix(2, 2, {1, 0, 0, 1});
  EXPECT_THROW(info_nce_value(bad, good, 1.0), ContractError);
  EXPECT_THROW(info_nce_value(good, bad, 1.0), ContractError);
}

TEST(CompositeLossTest, AlphaZeroIsBitForBitL1) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 10.0);
  for (int i = 0; i < 100; ++i) {
    const double l1 = n(rng), l2 = n(rng);
    const double out = composite_loss(l1, l2, 0.0);
    EXPECT_EQ(std::memcmp(&out, &l1, sizeof out), 0);
  }
  EXPECT_NEAR(composite_loss(0.5, 1.0, 0.2), 0.7, 1e-15);
  Tape tape(false);
  Var l1 = tape.constant(Tensor::scalar(0.123));
  EXPECT_EQ(composite_loss(l1, tape.constant(Tensor::scalar(5.0)), 0.0).id, l1.id);
}

TEST(AuxLossTest, ImageFreeBatchIsExactlyZero) {
  const Model m(tiny_model(), 1);
  auto records = corpus({0, 6, 0});
  for (auto& r : records) r.target = drop_image(r.target);
  Tape tape(false);
  EXPECT_EQ(aux_loss(tape, m, pointers(records), LossConfig{}).value().item(), 0.0);
  EXPECT_THROW(aux_loss(tape, m, {}, LossConfig{}), ContractError);
}

TEST(AuxLossTest, SelfCaseIsEntropyWithZeroTeacherGradient) {
  std::mt19937_64 rng(5);
  const Tensor e = unit_rows(3, 8, rng);
  for (AuxForm form : {AuxForm::cross_entropy}) {
    LossConfig cfg;
    cfg.aux_form = form;
    cfg.aux_temp = 0.5;
    Tape tape;
    Var full = tape.leaf(e), dropped = tape.leaf(e);
    Var h = aux_terms(full, dropped, cfg);
    double entropy = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      double z = 0.0;
      for (std::size_t k = 0; k < 8; ++k) z += std::exp(e.at(i, k) / 0.5);
      for (std::size_t k = 0; k < 8; ++k) {
        const double p = std::exp(e.at(i, k) / 0.5) / z;
        entropy -= p * std::log(p);
      }
    }
    EXPECT_NEAR(h.value().item(), entropy, 1e-12);
    tape.backward(h);
    for (double g : tape.grad(full)) EXPECT_EQ(g, 0.0);
    // At E' = E the cross-entropy is stationary in E' as well.
    for (double g : tape.grad(dropped)) EXPECT_NEAR(g, 0.0, 1e-12);
  }
}

TEST(AuxLossTest, TeacherGradientFlowsWhenStopGradIsOff) {
  std::mt19937_64 rng(6);
  LossConfig cfg;
  cfg.stop_grad_target = false;
  Tape tape;
  Var full = tape.leaf(unit_rows(2, 6, rng)), dropped = tape.leaf(unit_rows(2, 6, rng));
  tape.backward(aux_terms(full, dropped, cfg));
  double total = 0.0;
  for (double g : tape.grad(full)) total += std::abs(g);
  EXPECT_GT(total, 1e-6);
}

// Independent re-implementation: embed every image-bearing side with and
// without its image and sum H(softmax(E/T), softmax(E'/T)) per side.
TEST(AuxLossTest, MatchesPerSideOracle) {
  const Model m(tiny_model(), 2);
  const auto records = corpus({5, 5, 5});
  LossConfig cfg;
  cfg.aux_temp = 0.7;
  double oracle = 0.0;
  for (const auto& r : records) {
    for (const ModalInput* side : {&r.query, &r.target}) {
      if (!side->has_image()) continue;
      const auto e = m.embed(*side).values, ed = m.embed(drop_image(*side)).values;
      double ze = 0.0, zd = 0.0;
      for (std::size_t k = 0; k < e.size(); ++k) {
        ze += std::exp(e[k] / cfg.aux_temp);
        zd += std::exp(ed[k] / cfg.aux_temp);
      }
      for (std::size_t k = 0; k < e.size(); ++k) {
        oracle -= std::exp(e[k] / cfg.aux_temp) / ze * (ed[k] / cfg.aux_temp - std::log(zd));
      }
    }
  }
  oracle /= static_cast<double>(records.size());
  Tape tape(false);
  EXPECT_NEAR(aux_loss(tape, m, pointers(records), cfg).value().item(), oracle, 1e-9);
}

TEST(AuxLossTest, AlternativeFormsAreZeroOnIdenticalInputs) {
  std::mt19937_64 rng(8);
  const Tensor e = unit_rows(3, 5, rng);
  for (AuxForm form : {AuxForm::mse, AuxForm::cosine}) {
    LossConfig cfg;
    cfg.aux_form = form;
    Tape tape(false);
    EXPECT_NEAR(aux_terms(tape.constant(e), tape.constant(e), cfg).value().item(), 0.0, 1e-12)
        << to_string(form);
  }
  EXPECT_THROW(parse_aux_form("kl"), ConfigError);
}

std::vector<std::vector<double>> param_grads(Model& m) {
  std::vector<std::vector<double>> out;
  for (auto& p : m.parameters()) {
    out.emplace_back(p.tensor->grad().begin(), p.tensor->grad().end());
    p.tensor->zero_grad();
  }
  return out;
}

TEST(CompositeLossTest, GradientIsL1PlusAlphaL2) {
  Model m(tiny_model(), 3);
  m.set_trainable(true);
  const auto records = corpus({4, 4, 4});
  const auto batch = pointers(records);
  LossConfig cfg;
  cfg.tau = 0.3;
  cfg.alpha = 0.35;
  for (auto& p : m.parameters()) p.tensor->zero_grad();

  {
    Tape t;
    t.backward(batch_loss(t, m, batch, cfg).total);
  }
  const auto g_total = param_grads(m);
  LossConfig l1_only = cfg;
  l1_only.alpha = 0.0;
  {
    Tape t;
    t.backward(batch_loss(t, m, batch, l1_only).total);
  }
  const auto g1 = param_grads(m);
  {
    Tape t;
    t.backward(aux_loss(t, m, batch, cfg));
  }
  const auto g2 = param_grads(m);
  double worst = 0.0;
  for (std::size_t i = 0; i < g_total.size(); ++i) {
    for (std::size_t k = 0; k < g_total[i].size(); ++k) {
      const double expect = g1[i][k] + cfg.alpha * g2[i][k];
      worst = std::max(worst, std::abs(g_total[i][k] - expect) / std::max(1.0, std::abs(expect)));
    }
  }
  EXPECT_LT(worst, 1e-10);

  // And the combined gradient agrees with finite differences.
  std::vector<Tensor*> params;
  for (auto& p : m.parameters()) params.push_back(p.tensor);
  LossConfig fd_cfg = cfg;
  fd_cfg.stop_grad_target = false;
  auto r = grad_check([&](Tape& t) { return batch_loss(t, m, batch, fd_cfg).total; }, params,
                      {.epsilon = 1e-5, .tolerance = 1e-3, .max_coords_per_tensor = 2, .seed = 3});
  EXPECT_TRUE(r.passed) << r.message;
}

TEST(AdapterTest, RankEightOnSquareLayerAdds512Params) {
  Rng rng(1);
  Linear l(32, 32, rng);
  l.attach_adapter(8, 1.0, rng);
  EXPECT_EQ(l.lora_a.size() + l.lora_b.size(), 512u);
  for (double v : l.lora_b.data()) EXPECT_EQ(v, 0.0);
}

TEST(AdapterTest, ZeroInitLeavesOutputsBitwiseUnchanged) {
  Model base(ModelConfig{}, 5), adapted(ModelConfig{}, 5);
  const std::size_t added = apply_low_rank_adapters(adapted, AdapterConfig{}, 9);
  std::size_t expected = 0;
  adapted.for_each_linear([&](const std::string&, Linear& l) { expected += 8 * (l.in_features() + l.out_features()); });
  EXPECT_EQ(added, expected);
  std::vector<ModalInput> inputs;
  for (const auto& r : corpus({3, 3, 3})) {
    inputs.push_back(r.query);
    inputs.push_back(r.target);
  }
  EXPECT_TRUE(base.embed_all(inputs).same_values(adapted.embed_all(inputs)));
}

TEST(AdapterTest, RankAtOrAboveMinDimIsConfigError) {
  Model m(ModelConfig{}, 5);
  AdapterConfig cfg;
  cfg.rank = 16;  // vision input layer is 16 x 32
  EXPECT_THROW(apply_low_rank_adapters(m, cfg, 1), ConfigError);
  cfg.targets = {"backbone"};
  EXPECT_NO_THROW(apply_low_rank_adapters(m, cfg, 1));
  cfg.targets = {"nowhere"};
  EXPECT_THROW(apply_low_rank_adapters(m, cfg, 1), ConfigError);
}

TEST(AdapterTest, MergePreservesOutputs) {
  Model m(tiny_model(), 5);
  AdapterConfig cfg;
  cfg.rank = 4;
  apply_low_rank_adapters(m, cfg, 2);
  for (auto& p : m.parameters()) {
    if (p.name.ends_with(".lora_b")) {
      for (std::size_t i = 0; i < p.tensor->size(); ++i) p.tensor->data()[i] = 0.01 * static_cast<double>(i % 7);
    }
  }
  const ModalInput in{{0, 4}, {7, 8, 9}, std::nullopt};
  const auto before = m.embed(in).values;
  merge_low_rank_adapters(m);
  for (const auto& p : m.parameters()) EXPECT_FALSE(p.name.ends_with(".lora_a")) << p.name;
  const auto after = m.embed(in).values;
  for (std::size_t k = 0; k < before.size(); ++k) EXPECT_NEAR(before[k], after[k], 1e-12);
}

// Solves the normal equations (X^T X) W = X^T R for the exact
// least-squares weight update.
std::vector<double> least_squares(const std::vector<double>& x, const std::vector<double>& r, std::size_t n,
                                  std::size_t in, std::size_t out) {
  std::vector<double> a(in * (in + out), 0.0);
  const std::size_t w = in + out;
  for (std::size_t i = 0; i < in; ++i) {
    for (std::size_t j = 0; j < in; ++j) {
      for (std::size_t s = 0; s < n; ++s) a[i * w + j] += x[s * in + i] * x[s * in + j];
    }
    for (std::size_t o = 0; o < out; ++o) {
      for (std::size_t s = 0; s < n; ++s) a[i * w + in + o] += x[s * in + i] * r[s * out + o];
    }
  }
  for (std::size_t c = 0; c < in; ++c) {
    std::size_t piv = c;
    for (std::size_t i = c + 1; i < in; ++i) {
      if (std::abs(a[i * w + c]) > std::abs(a[piv * w + c])) piv = i;
    }
    for (std::size_t j = 0; j < w; ++j) std::swap(a[c * w + j], a[piv * w + j]);
    for (std::size_t i = 0; i < in; ++i) {
      if (i == c) continue;
      const double f = a[i * w + c] / a[c * w + c];
      for (std::size_t j = 0; j < w; ++j) a[i * w + j] -= f * a[c * w + j];
    }
  }
  std::vector<double> sol(in * out);
  for (std::size_t i = 0; i < in; ++i) {
    for (std::size_t o = 0; o < out; ++o) sol[i * out + o] = a[i * w + in + o] / a[i * w + i];
  }
  return sol;
}

// On one linear layer, a full-rank adapter and full fine-tuning both reach
// the least-squares weight for a random linear target.
TEST(AdapterTest, FullRankAdapterSpansFullUpdate) {
  const std::size_t in = 6, out = 4, n = 40;
  Rng rng(12);
  std::normal_distribution<double> normal(0.0, 1.0);
  Linear base(in, out, rng);
  Tensor x({n, in}), y({n, out});
  for (auto& v : x.data()) v = normal(rng);
  std::vector<double> w_true(in * out);
  for (auto& v : w_true) v = normal(rng);
  std::vector<double> residual(n * out);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t o = 0; o < out; ++o) {
      double v = base.bias[o];
      for (std::size_t i = 0; i < in; ++i) v += x.at(s, i) * w_true[i * out + o];
      y.at(s, o) = v;
      residual[s * out + o] = v - base.bias[o];
    }
  }
  const auto w_ls = least_squares({x.data().begin(), x.data().end()}, residual, n, in, out);

  auto fit = [&](Linear& l, std::vector<NamedTensor> params) {
    for (auto& p : params) p.tensor->set_requires_grad(true);
    Adam adam(0.02, 0.9, 0.999, 1e-8);
    for (int step = 0; step < 4000; ++step) {
      Tape tape;
      Var diff = ops::sub(l.forward(tape, tape.constant(x)), tape.constant(y));
      tape.backward(ops::mean(ops::mul(diff, diff)));
      adam.step(params);
      for (auto& p : params) p.tensor->zero_grad();
    }
    std::vector<double> eff(in * out);
    for (std::size_t i = 0; i < in; ++i) {
      for (std::size_t o = 0; o < out; ++o) {
        double v = l.weight.at(i, o);
        for (std::size_t r = 0; r < l.adapter_rank; ++r) {
          v += l.adapter_scale * l.lora_b.at(o, r) * l.lora_a.at(r, i);
        }
        eff[i * out + o] = v;
      }
    }
    return eff;
  };

  Linear full = base;
  const auto w_full = fit(full, {{"w", &full.weight}});
  Linear adapted = base;
  adapted.attach_adapter(std::min(in, out), 1.0, rng);
  const auto w_adapt = fit(adapted, {{"a", &adapted.lora_a}, {"b", &adapted.lora_b}});
  for (std::size_t k = 0; k < w_ls.size(); ++k) {
    EXPECT_NEAR(w_full[k], w_ls[k], 1e-4) << k;
    EXPECT_NEAR(w_adapt[k], w_ls[k], 1e-4) << k;
  }
}

TEST(TrainTest, LossDecreasesOnSmallConfig) {
  Model m(tiny_model(), 1);
  const auto records = corpus({200, 200, 200});
  TrainConfig tc;
  tc.batch_size = 32;
  tc.steps = 80;
  tc.learning_rate = 3e-3;
  const auto result = train(m, records, tc, LossConfig{});
  ASSERT_FALSE(result.diverged);
  ASSERT_EQ(result.trace.size(), 80u);
  EXPECT_LT(mean_loss(result.trace, 60, 80, &StepStats::l1), mean_loss(result.trace, 0, 20, &StepStats::l1));
}

TEST(TrainTest, SameSeedSameTrace) {
  const auto records = corpus({40, 40, 40});
  TrainConfig tc;
  tc.batch_size = 16;
  tc.steps = 6;
  auto run = [&] {
    Model m(tiny_model(), 2);
    return train(m, records, tc, LossConfig{}).trace;
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(std::memcmp(&a[i].loss, &b[i].loss, sizeof(double)), 0);
    EXPECT_EQ(std::memcmp(&a[i].l2, &b[i].l2, sizeof(double)), 0);
  }
}

TEST(TrainTest, NonFiniteLossStopsWithModelUntouched) {
  Model m(tiny_model(), 2);
  auto params = m.parameters();
  params[3].tensor->data()[0] = std::nan("");
  std::vector<Tensor> before;
  for (const auto& p : params) before.push_back(*p.tensor);
  TrainConfig tc;
  tc.batch_size = 8;
  tc.steps = 5;
  const auto result = train(m, corpus({10, 10, 10}), tc, LossConfig{});
  EXPECT_TRUE(result.diverged);
  EXPECT_EQ(result.diverged_at, 0u);
  EXPECT_TRUE(result.trace.empty());
  for (std::size_t i = 0; i < params.size(); ++i) EXPECT_TRUE(params[i].tensor->same_values(before[i]));
}

TEST(TrainTest, AdapterOnlyTrainingFreezesBaseWeights) {
  Model m(tiny_model(), 2);
  AdapterConfig ac;
  ac.rank = 2;
  apply_low_rank_adapters(m, ac, 3);
  std::vector<Tensor> before;
  for (const auto& p : m.parameters()) before.push_back(*p.tensor);
  TrainConfig tc;
  tc.batch_size = 8;
  tc.steps = 3;
  tc.adapters_only = true;
  ASSERT_FALSE(train(m, corpus({10, 10, 10}), tc, LossConfig{}).diverged);
  std::size_t changed_adapters = 0;
  auto params = m.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const bool adapter = params[i].name.ends_with(".lora_a") || params[i].name.ends_with(".lora_b");
    const bool same = params[i].tensor->same_values(before[i]);
    if (adapter) {
      changed_adapters += !same;
    } else {
      EXPECT_TRUE(same) << params[i].name;
    }
  }
  EXPECT_GT(changed_adapters, 0u);
}

TEST(TrainTest, Preconditions) {
  Model m(tiny_model(), 2);
  TrainConfig tc;
  tc.batch_size = 64;
  EXPECT_THROW(train(m, corpus({10, 10, 10}), tc, LossConfig{}), ContractError);
  tc.adapters_only = true;
  tc.batch_size = 4;
  EXPECT_THROW(train(m, corpus({10, 10, 10}), tc, LossConfig{}), ContractError);
  LossConfig bad;
  bad.tau = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(TrainTest, LossTraceFileHasTwoColumns) {
  const std::vector<StepStats> trace = {{0, 1.5, 1.0, 2.5}, {1, 0.25, 0.2, 0.25}};
  const auto path = std::filesystem::temp_directory_path() / "mmembed_trace_test.txt";
  write_loss_trace(path, trace);
  std::ifstream in(path);
  std::size_t step;
  double loss;
  in >> step >> loss;
  EXPECT_EQ(step, 0u);
  EXPECT_EQ(loss, 1.5);
  in >> step >> loss;
  EXPECT_EQ(step, 1u);
  EXPECT_EQ(loss, 0.25);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace mmembed
