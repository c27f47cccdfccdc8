// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace qilin {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A token id or element index outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Malformed or empty caller input.
class InputError : public Error {
 public:
  using Error::Error;
};

/// A record that violates its type invariants.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Sequence longer than the model context or a configured maximum.
class LengthError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value, unknown target or stage mismatch.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Misuse of an API contract (e.g. backward on a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Non-finite function value or gradient.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// Corrupt, truncated or version-mismatched file.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

}  // namespace qilin
