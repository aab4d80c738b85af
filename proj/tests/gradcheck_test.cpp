// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <set>

#include "mmembed/error.hpp"
#include "mmembed/gradcheck_suite.hpp"

namespace mmembed {
namespace {

std::size_t failures(const GradCheckSuiteResult& r, const std::string& prefix) {
  std::size_t n = 0;
  for (const auto& rep : r.reports) n += !rep.passed && rep.name.starts_with(prefix + " ");
  return n;
}

TEST(GradCheckSuiteTest, FullSuitePassesOnThreeSeeds) {
  const auto r = run_gradcheck_suite();
  EXPECT_TRUE(r.passed);
  std::set<std::string> names;
  for (const auto& rep : r.reports) {
    EXPECT_TRUE(rep.passed) << rep.name << ": " << rep.message;
    EXPECT_GT(rep.checked, 0u) << rep.name;
    names.insert(rep.name);
  }
  EXPECT_EQ(names.size(), r.reports.size());
  EXPECT_EQ(r.reports.size(), registered_op_cases().size() * 3 * 3 + 3);
  EXPECT_LT(r.seconds, 60.0);
}

TEST(GradCheckSuiteTest, OpNamesAreUnique) {
  std::set<std::string> names;
  for (const auto& c : registered_op_cases()) EXPECT_TRUE(names.insert(c.name).second) << c.name;
  EXPECT_FALSE(names.contains(kPipelineCheckName));
}

TEST(GradCheckSuiteTest, InjectedOpFaultIsNamed) {
  for (const char* op : {"gelu", "matmul", "causal_attention"}) {
    GradCheckSuiteOptions o;
    o.seeds = {0};
    o.include_pipeline = false;
    o.inject_fault = op;
    const auto r = run_gradcheck_suite(o);
    EXPECT_FALSE(r.passed) << op;
    EXPECT_EQ(failures(r, op), o.shapes_per_op) << op;
    for (const auto& rep : r.reports) {
      if (!rep.name.starts_with(std::string(op) + " ")) EXPECT_TRUE(rep.passed) << rep.name;
    }
  }
}

TEST(GradCheckSuiteTest, InjectedPipelineFaultIsDetected) {
  GradCheckSuiteOptions o;
  o.seeds = {1};
  o.inject_fault = kPipelineCheckName;
  const auto r = run_gradcheck_suite(o);
  EXPECT_FALSE(r.passed);
  EXPECT_EQ(failures(r, kPipelineCheckName), 1u);
  for (const auto& rep : r.reports) {
    if (rep.name.starts_with(kPipelineCheckName)) EXPECT_FALSE(rep.message.empty());
  }
}

TEST(GradCheckSuiteTest, UnknownFaultTargetIsRejected) {
  GradCheckSuiteOptions o;
  o.inject_fault = "no_such_op";
  EXPECT_THROW(run_gradcheck_suite(o), ConfigError);
}

}  // namespace
}  // namespace mmembed
