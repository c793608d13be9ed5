#pragma once

#include <stdexcept>
#include <string>

namespace cmat {

// Error hierarchy. The CLI maps ConfigError -> exit 2 and NumericError -> exit 3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes (message names both shapes).
struct DimensionError : Error {
  using Error::Error;
};

// An API precondition was violated by the caller.
struct ContractError : Error {
  using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
  using Error::Error;
};

// Bad experiment configuration (unknown key, missing key, invalid value).
struct ConfigError : Error {
  using Error::Error;
};

// Checkpoint / file format problems.
struct IoError : Error {
  using Error::Error;
};

}  // namespace cmat
