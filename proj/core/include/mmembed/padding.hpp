// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mmembed {

/// Fixed-length input layout for the completion language model:
///
///   pad_prompt || content || [END] || N x [dummy],
///   N = target_length - len(pad_prompt) - len(content) - 1
///
/// so that text-derived pseudo visual tokens have as many positions as the
/// real visual tokens they stand in for.
struct PaddingConfig {
  std::vector<int> pad_prompt;
  int end_token = 0;
  int dummy_token = 0;
  std::size_t target_length = 0;

  /// Longest content that still fits: target_length - len(pad_prompt) - 1.
  std::size_t max_content_length() const;
  /// Throws ConfigError unless the reserved ids are mutually distinct and all
  /// >= `corpus_vocab`, and the prompt plus [END] fit in target_length.
  void validate(std::size_t corpus_vocab) const;
};

/// Number of dummy tokens appended after [END] for `content_length`.
std::size_t dummy_count(const PaddingConfig& cfg, std::size_t content_length);

/// Throws PaddingOverflowError (carrying the admissible maximum) when the
/// content does not fit; content is never truncated.
std::vector<int> pad_prompt(std::span<const int> content, const PaddingConfig& cfg);

}  // namespace mmembed
