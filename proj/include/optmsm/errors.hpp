// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace optmsm {

/// Base class for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor shape / dimension mismatch.
struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

/// Invalid configuration (unknown keys, bad values, inconsistent widths).
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

/// Malformed input file (CSV, schema, model file).
struct ParseError : Error {
  explicit ParseError(const std::string& msg) : Error(msg) {}
};

/// Dataset-level violation (bad scenario index, empty scenario, ...).
struct DataError : Error {
  explicit DataError(const std::string& msg) : Error(msg) {}
};

/// Numerical failure during training (divergence, non-finite gradients).
struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace optmsm
