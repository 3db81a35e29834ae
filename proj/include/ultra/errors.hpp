#pragma once

#include <stdexcept>
#include <string>

namespace ultra {

// Base class for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Non-finite data or a violated type invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A field handed to an operation in the wrong representation.
class StateError : public Error {
 public:
  using Error::Error;
};

// A documented precondition of an operation does not hold.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

}  // namespace ultra
