#pragma once

#include <stdexcept>
#include <string>

namespace mico {

// Bad or missing input data. The CLI maps this to exit code 1.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration value (k < 1, batch_size < 2, ...). Also an input error.
class ConfigError : public InputError {
 public:
  using InputError::InputError;
};

// A valid job that failed while running (non-finite loss, write failure).
// The CLI maps this to exit code 2.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mico
