#pragma once

#include <stdexcept>
#include <string>

namespace mistseg {

/// Raised when tensor shapes disagree. The message names the offending dimension.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for malformed configuration files or out-of-range hyperparameters.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File-system and codec failures (PNG, checkpoints, dataset folders).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mistseg
