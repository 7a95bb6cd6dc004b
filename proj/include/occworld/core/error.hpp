// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace occworld {

/// Base for every exception raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad arguments or configuration supplied by the caller.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes that do not fit an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Missing, malformed, or inconsistent data on disk or in memory.
class DataError : public Error {
 public:
  using Error::Error;
};

/// A non-finite loss or value surfaced during training or evaluation.
class NumericError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

}  // namespace detail
}  // namespace occworld
