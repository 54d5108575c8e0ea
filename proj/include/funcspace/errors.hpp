#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace funcspace {

// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor or graph shape violations.
struct ShapeError : Error {
  using Error::Error;
};

// A forward pass produced NaN/Inf. node_id identifies the first offending
// tape node.
struct NonFiniteError : Error {
  NonFiniteError(const std::string& msg, std::size_t node)
      : Error(msg), node_id(node) {}
  std::size_t node_id;
};

// Malformed or incompatible on-disk data.
struct FormatError : Error {
  using Error::Error;
};

// Filesystem failures.
struct IoError : Error {
  using Error::Error;
};

// Invalid configuration or arguments.
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace funcspace
