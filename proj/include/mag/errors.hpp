#pragma once

#include <stdexcept>
#include <string>

namespace mag {

// Shape/dimension violations between tensors or model components.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// API contract violations (e.g. backward on a non-scalar).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// Malformed input files; message carries the line number where known.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Missing or unreadable files.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration values.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace mag
