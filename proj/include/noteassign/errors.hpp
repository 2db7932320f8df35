#pragma once

#include <stdexcept>
#include <string>

namespace noteassign {

// Exit-code families used by the CLI: usage 1, data 2, numeric 3.

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input files, bad configs, missing paths, shape mismatches.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite losses or parameters during training / inference.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace noteassign
