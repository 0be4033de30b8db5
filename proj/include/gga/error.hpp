#pragma once

#include <stdexcept>
#include <string>

namespace gga {

// Base of everything the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform to what a primitive expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite value produced or consumed (training divergence, bad input).
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed input files, infeasible splits, label mismatches.
class DataError : public Error {
 public:
  using Error::Error;
};

// Unknown or malformed configuration keys and values.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error(what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

// An interface was used from a context that is not allowed to use it.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace gga
