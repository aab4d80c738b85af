// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <thread>

#include "mmembed/error.hpp"
#include "mmembed/grad_check.hpp"
#include "mmembed/gradcheck_suite.hpp"
#include "mmembed/ops.hpp"

namespace mmembed {
namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double sd = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, sd);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

TEST(TensorTest, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  EXPECT_THROW(Tensor(Shape{0, 3}), DimensionError);
  Tensor t({2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_FALSE(t.has_grad());
  EXPECT_EQ(t.grad().size(), 6u);
}

TEST(MatmulTest, IdentityAndScalar) {
  Tape tape(false);
  auto i = tape.constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  auto b = tape.constant(Tensor::matrix(2, 2, {3, 4, 5, 6}));
  EXPECT_TRUE(ops::matmul(i, b).value().same_values(Tensor::matrix(2, 2, {3, 4, 5, 6})));
  auto two = tape.constant(Tensor::matrix(1, 1, {2}));
  auto three = tape.constant(Tensor::matrix(1, 1, {3}));
  EXPECT_EQ(ops::matmul(two, three).value().item(), 6.0);
}

TEST(MatmulTest, ShapeMismatchNamesBothShapes) {
  Tape tape(false);
  auto a = tape.constant(Tensor({2, 3}));
  auto b = tape.constant(Tensor({2, 3}));
  try {
    ops::matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3] x [2x3]"), std::string::npos) << e.what();
  }
}

TEST(MatmulTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  auto r = grad_check([](Tape&, std::span<const Var> in) { return ops::matmul(in[0], in[1]); },
                      {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)},
                      {.epsilon = 1e-5, .tolerance = 1e-6});
  EXPECT_TRUE(r.passed) << r.message;
}

TEST(SoftmaxCrossEntropyTest, UniformAndSaturated) {
  Tape tape(false);
  auto h = ops::softmax_cross_entropy(tape.constant(Tensor({2}, {0.0, 0.0})),
                                      tape.constant(Tensor({2}, {0.5, 0.5})));
  EXPECT_NEAR(h.value().item(), std::log(2.0), 1e-15);
  auto s = ops::softmax_cross_entropy(tape.constant(Tensor({2}, {1000.0, 0.0})),
                                      tape.constant(Tensor({2}, {1.0, 0.0})));
  EXPECT_TRUE(std::isfinite(s.value().item()));
  EXPECT_NEAR(s.value().item(), 0.0, 1e-300);
}

TEST(SoftmaxCrossEntropyTest, MatchesNaiveFormula) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 2.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> logits(8), target(8);
    double total = 0.0;
    for (int i = 0; i < 8; ++i) {
      logits[i] = n(rng);
      target[i] = u(rng);
      total += target[i];
    }
    for (auto& t : target) t /= total;
    // Unstabilized oracle.
    double z = 0.0;
    for (double l : logits) z += std::exp(l);
    double expected = 0.0;
    for (int i = 0; i < 8; ++i) expected -= target[i] * std::log(std::exp(logits[i]) / z);
    Tape tape(false);
    auto h = ops::softmax_cross_entropy(tape.constant(Tensor({8}, logits)),
                                        tape.constant(Tensor({8}, target)));
    EXPECT_NEAR(h.value().item(), expected, 1e-9);
  }
}

TEST(SoftmaxCrossEntropyTest, RejectsUnnormalizedTarget) {
  Tape tape(false);
  EXPECT_THROW(ops::softmax_cross_entropy(tape.constant(Tensor({2}, {0.0, 0.0})),
                                          tape.constant(Tensor({2}, {0.5, 0.6}))),
               ContractError);
  EXPECT_THROW(ops::softmax_cross_entropy(tape.constant(Tensor({2}, {0.0, 0.0})),
                                          tape.constant(Tensor({2}, {1.5, -0.5}))),
               ContractError);
}

TEST(SoftmaxTest, RowsSumToOne) {
  std::mt19937_64 rng(5);
  for (double sd : {1e-3, 1.0, 50.0, 800.0}) {
    Tape tape(false);
    auto p = ops::softmax_rows(tape.constant(random_tensor({6, 9}, rng, sd)));
    for (std::size_t r = 0; r < 6; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 9; ++c) s += p.value().at(r, c);
      EXPECT_NEAR(s, 1.0, 1e-9) << "sd=" << sd;
    }
  }
}

TEST(CosineSimilarityTest, Basics) {
  Tape tape(false);
  auto cs = [&](std::vector<double> a, std::vector<double> b) {
    const auto n = a.size();
    return ops::cosine_similarity(tape.constant(Tensor({n}, a)), tape.constant(Tensor({n}, b)))
        .value()
        .item();
  };
  EXPECT_NEAR(cs({1, 2, 3}, {1, 2, 3}), 1.0, 1e-15);
  EXPECT_EQ(cs({1, 0}, {0, 1}), 0.0);
  EXPECT_NEAR(cs({1, 1}, {-1, -1}), -1.0, 1e-15);
  EXPECT_THROW(cs({0, 0}, {1, 1}), DegenerateInputError);
}

TEST(CosineSimilarityTest, ScaleInvariance) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> s(1e-3, 1e3);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor a = random_tensor({7}, rng);
    Tensor b = a;
    const double k = s(rng);
    for (auto& v : b.data()) v *= k;
    Tape tape(false);
    auto c = ops::cosine_similarity(tape.constant(a), tape.constant(b));
    EXPECT_NEAR(c.value().item(), 1.0, 1e-12);
  }
}

TEST(AutodiffTest, SharedSubexpressionsAccumulate) {
  Tape tape;
  auto x = tape.leaf(Tensor::scalar(3.0));
  auto y = ops::add(x, x);
  tape.backward(y);
  EXPECT_EQ(tape.grad(x)[0], 2.0);
}

TEST(AutodiffTest, BackwardVisitsEachNodeOnce) {
  Tape tape;
  auto x = tape.leaf(Tensor::scalar(2.0));
  auto a = ops::mul(x, x);      // 1
  auto b = ops::add(a, x);      // 2
  auto c = ops::mul(b, a);      // 3
  tape.backward(c);
  EXPECT_EQ(tape.backward_visits(), 3u);
  // c = (x^2 + x) x^2 -> dc/dx = 4x^3 + 3x^2 = 44 at x=2
  EXPECT_DOUBLE_EQ(tape.grad(x)[0], 44.0);
  EXPECT_THROW(tape.backward(c), ContractError);
}

TEST(AutodiffTest, BoundParameterReceivesGradient) {
  Tensor w = Tensor::matrix(1, 2, {1.0, -2.0});
  w.set_requires_grad(true);
  Tensor frozen = Tensor::matrix(1, 2, {5.0, 5.0});
  Tape tape;
  auto y = ops::sum(ops::mul(tape.bind(w), tape.bind(frozen)));
  EXPECT_EQ(tape.bind(w).id, tape.bind(w).id);
  tape.backward(y);
  EXPECT_EQ(w.grad()[0], 5.0);
  EXPECT_EQ(w.grad()[1], 5.0);
  EXPECT_FALSE(frozen.has_grad());
}

TEST(AutodiffTest, InferenceTapeIsThreadSafe) {
  std::mt19937_64 rng(1);
  Tensor w = random_tensor({16, 16}, rng);
  Tensor x = random_tensor({4, 16}, rng);
  auto run = [&] {
    Tape tape(false);
    return ops::gelu(ops::matmul(tape.constant(x), tape.bind(w))).value();
  };
  const Tensor expected = run();
  std::vector<std::thread> threads;
  std::vector<int> ok(4, 0);
  for (int i = 0; i < 4; ++i) {
    threads.emplace_back([&, i] {
      for (int k = 0; k < 50; ++k) ok[i] += run().same_values(expected);
    });
  }
  for (auto& t : threads) t.join();
  for (int v : ok) EXPECT_EQ(v, 50);
}

class OpGradientTest : public ::testing::TestWithParam<int> {};

// Every registered op on three random shapes, f64, eps 1e-5, tol 1e-4.
TEST_P(OpGradientTest, AllOpsPassFiniteDifferenceCheck) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(GetParam()) * 7919 + 1);
  for (const auto& c : registered_op_cases()) {
    for (std::size_t k = 0; k < 3; ++k) {
      auto r = grad_check(c.op, c.inputs(rng, k), {.epsilon = 1e-5, .tolerance = 1e-4});
      EXPECT_TRUE(r.passed) << c.name << " shape#" << k << ": " << r.message;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradientTest, ::testing::Values(0, 1, 2));

TEST(GradCheckTest, RejectsBadEpsilonAndNonFiniteInput) {
  auto op = [](Tape&, std::span<const Var> v) { return ops::sum(v[0]); };
  EXPECT_THROW(grad_check(op, {Tensor({2}, {1.0, 2.0})}, {.epsilon = 0.1}), ContractError);
  EXPECT_THROW(grad_check(op, {Tensor({2}, {1.0, NAN})}), ContractError);
}

TEST(GradCheckTest, DetectsWrongBackward) {
  // tanh with a sign-flipped derivative.
  OpUnderTest bad = [](Tape& tape, std::span<const Var> v) {
    Var x = v[0];
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.value()[i]);
    const Var in[] = {x};
    return tape.push(std::move(out), in, [x](Tape& t, int self) {
      auto g = t.grad_of(self);
      auto gx = t.grad_of(x);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double y = std::tanh(x.value()[i]);
        gx[i] -= g[i] * (1.0 - y * y);
      }
    });
  };
  std::mt19937_64 rng(2);
  auto r = grad_check(bad, {random_tensor({3, 3}, rng)});
  EXPECT_FALSE(r.passed);
  EXPECT_GT(r.max_rel_error, 1.0);
}

TEST(GradCheckTest, ReportsNonFiniteGradient) {
  OpUnderTest bad = [](Tape& tape, std::span<const Var> v) {
    Var x = v[0];
    const Var in[] = {x};
    return tape.push(Tensor::scalar(x.value()[0]), in, [x](Tape& t, int) {
      t.grad_of(x)[1] += NAN;
    });
  };
  auto r = grad_check(bad, {Tensor({3}, {1.0, 2.0, 3.0})});
  EXPECT_FALSE(r.passed);
  EXPECT_EQ(r.worst_index, 1u);
  EXPECT_NE(r.message.find("non-finite"), std::string::npos);
}

}  // namespace
}  // namespace mmembed
