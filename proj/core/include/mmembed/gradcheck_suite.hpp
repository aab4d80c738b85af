// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mmembed/grad_check.hpp"

namespace mmembed {

/// One registered differentiable op with a generator for random inputs.
/// `variant` (0, 1, 2, ...) selects progressively larger shapes.
struct OpCase {
  std::string name;
  std::function<std::vector<Tensor>(std::mt19937_64& rng, std::size_t variant)> inputs;
  OpUnderTest op;
};

/// Every differentiable op the model uses.
const std::vector<OpCase>& registered_op_cases();

/// The name used for the full-pipeline check in reports and fault injection.
inline constexpr const char* kPipelineCheckName = "pipeline";

struct GradCheckSuiteOptions {
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::size_t shapes_per_op = 3;
  double op_tolerance = 1e-4;
  double pipeline_tolerance = 1e-3;
  double epsilon = 1e-5;
  bool include_pipeline = true;
  /// Name of an op (or "pipeline") whose backward gets a sign flip, for
  /// checking that the suite catches a broken gradient.
  std::string inject_fault;
};

struct GradCheckSuiteResult {
  std::vector<GradCheckReport> reports;
  bool passed = true;
  double seconds = 0.0;
};

/// Runs every registered op on `shapes_per_op` shapes per seed, then the
/// embed -> composite loss pipeline of a small 2-layer model per seed.
/// Throws ConfigError when `inject_fault` names nothing registered.
GradCheckSuiteResult run_gradcheck_suite(const GradCheckSuiteOptions& options = {});

/// Identity whose backward negates the incoming gradient.
Var sign_flip_backward(Tape& tape, Var x);

}  // namespace mmembed
