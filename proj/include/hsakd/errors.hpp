// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace hsakd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or dimension mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced by a primitive or a loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Violated precondition (out-of-range index, bad argument, missing grad).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Malformed dataset, checkpoint or report file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace hsakd
