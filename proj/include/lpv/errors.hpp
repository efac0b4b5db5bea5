#pragma once

#include <stdexcept>
#include <string>

#include "lpv/real.hpp"

namespace lpv::inline LPV_NS {

// Shape or dimension mismatch between operands.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid configuration value (odd width, indivisible grid, unknown key...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Caller violated a documented precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// File could not be read or written; message carries the path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed checkpoint or data file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Loss or activations became non-finite.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lpv::inline LPV_NS
