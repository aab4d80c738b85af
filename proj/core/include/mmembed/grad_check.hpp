// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mmembed/autodiff.hpp"

namespace mmembed {

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  /// 0 checks every coordinate; otherwise a seeded sample of at most this
  /// many coordinates per tensor.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0x5eed;
};

struct GradCheckReport {
  std::string name;
  bool passed = false;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Location of the worst (or first non-finite) coordinate.
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  std::string message;
};

/// Error measure used by grad_check: |a - n| / max(|a|, |n|, 1e-3). The floor
/// keeps coordinates with near-zero gradient from amplifying round-off.
double gradient_relative_error(double analytic, double numeric);

/// Compares the analytic gradient of the scalar `fn` w.r.t. every tensor in
/// `params` with central finite differences. `fn` must bind the params into
/// the tape it is given (directly or through a model). Non-scalar outputs are
/// reduced with a fixed random projection first. Params are restored on exit.
GradCheckReport grad_check(const std::function<Var(Tape&)>& fn,
                           std::span<Tensor* const> params,
                           const GradCheckOptions& options = {});

using OpUnderTest = std::function<Var(Tape&, std::span<const Var>)>;

/// Op-level form: `op` receives one leaf Var per input tensor.
GradCheckReport grad_check(const OpUnderTest& op, std::vector<Tensor> inputs,
                           const GradCheckOptions& options = {});

}  // namespace mmembed
