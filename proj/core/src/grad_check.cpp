// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmembed/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "mmembed/error.hpp"
#include "mmembed/ops.hpp"

namespace mmembed {
namespace {

// Scalar objective: fn's output itself, or <w, out> for a fixed random w.
class Objective {
 public:
  Objective(const std::function<Var(Tape&)>& fn, std::uint64_t seed) : fn_(fn), seed_(seed) {}

  Var build(Tape& tape) {
    Var out = fn_(tape);
    if (out.value().size() == 1) return out;
    if (weights_.size() != out.value().size()) {
      std::mt19937_64 rng(seed_);
      std::normal_distribution<double> normal(0.0, 1.0);
      weights_.resize(out.value().size());
      for (auto& w : weights_) w = normal(rng);
    }
    Var w = tape.constant(Tensor(out.shape(), weights_));
    return ops::sum(ops::mul(out, w));
  }

  double eval() {
    Tape tape(false);
    return build(tape).value().item();
  }

 private:
  const std::function<Var(Tape&)>& fn_;
  std::uint64_t seed_;
  std::vector<double> weights_;
};

}  // namespace

double gradient_relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const std::function<Var(Tape&)>& fn,
                           std::span<Tensor* const> params,
                           const GradCheckOptions& options) {
  if (!(options.epsilon > 0.0) || options.epsilon > 1e-2) {
    throw ContractError("grad_check: epsilon must lie in (0, 1e-2], got " +
                        std::to_string(options.epsilon));
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (double v : params[p]->data()) {
      if (!std::isfinite(v)) {
        throw ContractError("grad_check: input " + std::to_string(p) + " is not finite");
      }
    }
  }

  GradCheckReport report;
  Objective objective(fn, options.seed);

  std::vector<bool> prev_flags;
  for (Tensor* p : params) {
    prev_flags.push_back(p->requires_grad());
    p->set_requires_grad(true);
    p->zero_grad();
    p->grad();
  }
  {
    Tape tape(true);
    Var loss = objective.build(tape);
    tape.backward(loss);
  }

  std::mt19937_64 pick(options.seed ^ 0x9e3779b97f4a7c15ULL);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = *params[p];
    std::vector<std::size_t> coords(t.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_tensor > 0 && coords.size() > options.max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), pick);
      coords.resize(options.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double analytic = t.grad()[i];
      if (!std::isfinite(analytic)) {
        report.passed = false;
        report.worst_tensor = p;
        report.worst_index = i;
        report.max_rel_error = std::numeric_limits<double>::infinity();
        report.message = "non-finite analytic gradient at input " + std::to_string(p) +
                         " index " + std::to_string(i);
        for (std::size_t q = 0; q < params.size(); ++q) {
          params[q]->set_requires_grad(prev_flags[q]);
        }
        return report;
      }
      const double orig = t[i];
      t[i] = orig + options.epsilon;
      const double plus = objective.eval();
      t[i] = orig - options.epsilon;
      const double minus = objective.eval();
      t[i] = orig;
      const double numeric = (plus - minus) / (2.0 * options.epsilon);
      const double err = gradient_relative_error(analytic, numeric);
      ++report.checked;
      // NaN compares false, so it always becomes the worst coordinate.
      if (report.checked == 1 || !(err <= report.max_rel_error)) {
        report.max_rel_error = err;
        report.worst_tensor = p;
        report.worst_index = i;
      }
    }
  }
  for (std::size_t q = 0; q < params.size(); ++q) params[q]->set_requires_grad(prev_flags[q]);

  report.passed = report.max_rel_error <= options.tolerance;
  std::ostringstream msg;
  msg << "max rel err " << report.max_rel_error << " at input " << report.worst_tensor
      << " index " << report.worst_index << " over " << report.checked << " coords (tol "
      << options.tolerance << ")";
  report.message = msg.str();
  return report;
}

GradCheckReport grad_check(const OpUnderTest& op, std::vector<Tensor> inputs,
                           const GradCheckOptions& options) {
  std::vector<Tensor*> ptrs;
  for (auto& t : inputs) ptrs.push_back(&t);
  std::function<Var(Tape&)> fn = [&](Tape& tape) {
    std::vector<Var> vars;
    for (auto* p : ptrs) vars.push_back(tape.bind(*p));
    return op(tape, vars);
  };
  return grad_check(fn, ptrs, options);
}

}  // namespace mmembed
