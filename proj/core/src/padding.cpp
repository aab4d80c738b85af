// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmembed/padding.hpp"

#include <algorithm>
#include <set>
#include <string>

#include "mmembed/error.hpp"

namespace mmembed {

std::size_t PaddingConfig::max_content_length() const {
  const std::size_t fixed = pad_prompt.size() + 1;
  return target_length >= fixed ? target_length - fixed : 0;
}

void PaddingConfig::validate(std::size_t corpus_vocab) const {
  std::set<int> ids(pad_prompt.begin(), pad_prompt.end());
  if (ids.size() != pad_prompt.size()) throw ConfigError("padding prompt repeats a token id");
  ids.insert(end_token);
  ids.insert(dummy_token);
  if (ids.size() != pad_prompt.size() + 2) {
    throw ConfigError("padding prompt, [END] and dummy ids must be mutually distinct");
  }
  if (*ids.begin() < static_cast<int>(corpus_vocab)) {
    throw ConfigError("padding ids must be reserved above the corpus vocabulary (" +
                      std::to_string(corpus_vocab) + ")");
  }
  if (pad_prompt.size() + 1 > target_length) {
    throw ConfigError("padding prompt of " + std::to_string(pad_prompt.size()) +
                      " tokens plus [END] exceeds target length " + std::to_string(target_length));
  }
}

std::size_t dummy_count(const PaddingConfig& cfg, std::size_t content_length) {
  const std::size_t used = cfg.pad_prompt.size() + content_length + 1;
  if (used > cfg.target_length) {
    throw PaddingOverflowError("content of " + std::to_string(content_length) +
                                   " tokens does not fit: at most " +
                                   std::to_string(cfg.max_content_length()) +
                                   " tokens are admissible for target length " +
                                   std::to_string(cfg.target_length),
                               cfg.max_content_length());
  }
  return cfg.target_length - used;
}

std::vector<int> pad_prompt(std::span<const int> content, const PaddingConfig& cfg) {
  const std::size_t n = dummy_count(cfg, content.size());
  std::vector<int> out;
  out.reserve(cfg.target_length);
  out.insert(out.end(), cfg.pad_prompt.begin(), cfg.pad_prompt.end());
  out.insert(out.end(), content.begin(), content.end());
  out.push_back(cfg.end_token);
  out.insert(out.end(), n, cfg.dummy_token);
  return out;
}

}  // namespace mmembed
