// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "mmembed/error.hpp"
#include "mmembed/padding.hpp"

namespace mmembed {
namespace {

PaddingConfig make_cfg(std::size_t prompt_len, std::size_t target, int base = 100) {
  PaddingConfig cfg;
  cfg.pad_prompt.resize(prompt_len);
  std::iota(cfg.pad_prompt.begin(), cfg.pad_prompt.end(), base);
  cfg.end_token = base + static_cast<int>(prompt_len);
  cfg.dummy_token = cfg.end_token + 1;
  cfg.target_length = target;
  return cfg;
}

TEST(PadPromptTest, FullScaleFormula) {
  const auto cfg = make_cfg(7, 576);
  EXPECT_EQ(dummy_count(cfg, 30), 576u - 7u - 30u - 1u);
  const std::vector<int> content(30, 1);
  EXPECT_EQ(pad_prompt(content, cfg).size(), 576u);
}

TEST(PadPromptTest, LayoutForSmallCase) {
  const auto cfg = make_cfg(5, 16);
  const std::vector<int> content = {1, 2, 3, 4, 5, 6};
  const auto out = pad_prompt(content, cfg);
  ASSERT_EQ(out.size(), 16u);
  EXPECT_EQ(dummy_count(cfg, 6), 4u);
  EXPECT_TRUE(std::equal(cfg.pad_prompt.begin(), cfg.pad_prompt.end(), out.begin()));
  EXPECT_TRUE(std::equal(content.begin(), content.end(), out.begin() + 5));
  EXPECT_EQ(out[11], cfg.end_token);
  EXPECT_EQ(std::count(out.begin() + 12, out.end(), cfg.dummy_token), 4);
}

TEST(PadPromptTest, OverflowReportsAdmissibleMaximum) {
  const auto cfg = make_cfg(10, 16);
  const std::vector<int> content(6, 1);
  try {
    pad_prompt(content, cfg);
    FAIL() << "expected overflow";
  } catch (const PaddingOverflowError& e) {
    EXPECT_EQ(e.max_content_length, 5u);
    EXPECT_NE(std::string(e.what()).find("at most 5"), std::string::npos) << e.what();
  }
}

TEST(PadPromptTest, ExactFitHasNoDummies) {
  const auto cfg = make_cfg(3, 8);
  const std::vector<int> content(4, 2);
  const auto out = pad_prompt(content, cfg);
  EXPECT_EQ(out.size(), 8u);
  EXPECT_EQ(out.back(), cfg.end_token);
  EXPECT_THROW(pad_prompt(std::vector<int>(5, 2), cfg), PaddingOverflowError);
}

// 1000 random (prompt, content, target) lengths: valid ones have the exact
// layout, invalid ones all raise.
TEST(PadPromptTest, RandomLengthsProperty) {
  std::mt19937_64 rng(20);
  std::uniform_int_distribution<std::size_t> target_len(1, 600), frac(0, 1000);
  std::size_t valid = 0, overflow = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t t = target_len(rng);
    const std::size_t p = frac(rng) * t / 1000;
    const std::size_t q = frac(rng) * t / 1000;
    const auto cfg = make_cfg(p, t, 1000);
    std::vector<int> content(q);
    std::uniform_int_distribution<int> tok(0, 999);
    for (auto& c : content) c = tok(rng);
    if (p + q + 1 <= t) {
      ++valid;
      const auto out = pad_prompt(content, cfg);
      ASSERT_EQ(out.size(), t);
      const std::size_t n = t - p - q - 1;
      EXPECT_EQ(dummy_count(cfg, q), n);
      EXPECT_EQ(std::count(out.begin(), out.end(), cfg.end_token), 1);
      EXPECT_EQ(out[p + q], cfg.end_token);
      EXPECT_EQ(static_cast<std::size_t>(std::count(out.begin(), out.end(), cfg.dummy_token)), n);
    } else {
      ++overflow;
      EXPECT_THROW(pad_prompt(content, cfg), PaddingOverflowError);
    }
  }
  EXPECT_GT(valid, 100u);
  EXPECT_GT(overflow, 100u);
}

TEST(PaddingConfigTest, ValidationRejectsCollisions) {
  auto cfg = make_cfg(2, 8, 64);
  EXPECT_NO_THROW(cfg.validate(64));
  EXPECT_THROW(cfg.validate(65), ConfigError);
  auto dup = cfg;
  dup.dummy_token = dup.end_token;
  EXPECT_THROW(dup.validate(64), ConfigError);
  auto rep = cfg;
  rep.pad_prompt = {64, 64};
  EXPECT_THROW(rep.validate(64), ConfigError);
  auto tight = make_cfg(8, 8, 64);
  EXPECT_THROW(tight.validate(64), ConfigError);
}

}  // namespace
}  // namespace mmembed
