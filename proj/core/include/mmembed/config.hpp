// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>

namespace mmembed {

/// Flat `key = value` configuration with dotted section prefixes:
///
///   # comment
///   seed = 7
///   corpus.count.TI_T = 2000
///   loss.alpha = 0.2
///
/// Later assignments override earlier ones. Values are kept as text and
/// converted on access; conversion failures raise ConfigError naming the key.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(const std::string& text);
  static KeyValueConfig load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  /// Throws ConfigError("missing required key '<key>'") when absent.
  const std::string& require(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  double require_double(const std::string& key) const;
  std::uint64_t require_uint(const std::string& key) const;

  /// Keys that were never read through any accessor.
  std::set<std::string> unused_keys() const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace mmembed
