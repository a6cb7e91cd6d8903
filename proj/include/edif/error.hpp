#pragma once

#include <stdexcept>

namespace edif {

// Precondition violations throw std::invalid_argument / std::out_of_range.
// The types below cover failures the command-line front end maps onto
// distinct exit codes.

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file contents, wrong magic/version, incompatible artifacts.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values during training or evaluation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace edif
