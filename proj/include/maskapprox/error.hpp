// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace maskapprox {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand extents disagree (matmul inner dims, elementwise shapes).
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Geometry that cannot produce a valid output (non-integral conv extents, bad reshape).
class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a documented precondition (non-scalar loss, z != 0 at t = 1, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// The errors below are "input" errors: the CLI maps them to exit code 2.

class ConfigError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class VocabError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace maskapprox
