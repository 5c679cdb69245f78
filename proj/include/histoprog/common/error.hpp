#pragma once

#include <stdexcept>
#include <string>

namespace histoprog {

// Bad input: malformed files, degenerate images, inconsistent shapes.
// The CLI maps these to exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Failures that happen while running a valid request (I/O, divergence).
// The CLI maps these to exit code 2.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace histoprog
