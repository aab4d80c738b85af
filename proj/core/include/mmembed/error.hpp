// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mmembed {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes that do not agree (matmul inner dims, checkpoint vs config, ...).
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition of an operation was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Input is mathematically degenerate for the op (zero-norm vector, ...).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// Padded sequence would exceed the target length.
class PaddingOverflowError : public Error {
 public:
  PaddingOverflowError(const std::string& what, std::size_t max_content)
      : Error(what), max_content_length(max_content) {}
  std::size_t max_content_length;
};

/// Malformed text input; `line` is 1-based, 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line_no)
      : Error(what), line(line_no) {}
  std::size_t line;
};

/// Well-formed input whose values violate the schema (unknown enum tag, ...).
class SchemaError : public ParseError {
 public:
  using ParseError::ParseError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace mmembed
