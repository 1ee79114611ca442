#pragma once

#include <stdexcept>
#include <string>

namespace spreadarray {

// Violated precondition or malformed input.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Parameters are well formed but the requested instance cannot exist,
// e.g. n below the minimum a construction needs.
class Infeasible : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

// A configured enumeration or summation cap would be exceeded.
class CapExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A randomized construction did not reach its target within the retry budget.
class RandomizedFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace spreadarray
