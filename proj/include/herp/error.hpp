#pragma once

// Error types shared by every module. The CLI maps each class to an exit code:
// InputError -> 1, ConfigError -> 2, InvariantError -> 3.

#include <stdexcept>
#include <string>

namespace herp {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept = 0;
};

// Bad or unusable input data (unparseable files, rejected spectra, empty sets).
class InputError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 1; }
};

// Out-of-range parameters, mismatched dimensions, inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

// A contract between modules was broken; indicates a bug, not bad input.
class InvariantError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

}  // namespace herp
