#pragma once

#include <stdexcept>
#include <string>

namespace stimfeat {

// Malformed input data (bad index, negative count, parse failure).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid model or generator configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A coordinate update produced a non-finite or out-of-domain value.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace stimfeat
