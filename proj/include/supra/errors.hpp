#pragma once

#include <stdexcept>

#include "supra/tensor.hpp"

namespace supra {

/// Invalid configuration values or incompatible config/checkpoint pairs.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or inconsistent input data (annotation, feature, manifest files).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An operation was called in a mode that does not support it.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace supra
