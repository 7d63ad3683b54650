#pragma once

#include <stdexcept>
#include <string>

namespace ehfkt {

// Error taxonomy maps onto CLI exit codes:
//   UsageError -> 1, DataError -> 2, NumericError -> 3.

// Bad flags, bad run configuration, misuse of a subcommand.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data: file format violations, shape
// mismatches, schema errors, unknown ids.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape mismatch between operands. Subclass of DataError so CLI surfaces
// it as a data problem (exit 2).
class DimensionError : public DataError {
 public:
  using DataError::DataError;
};

// Non-finite values where finite ones are required, diverged training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ehfkt
