#pragma once

#include <stdexcept>
#include <string>

namespace torq {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class InvalidScale : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NoTransferPossible : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Raised when the inter-block equalization loop exhausts its sweep budget.
// Carries the diagonal spread reached so callers can decide whether a
// best-effort rotation is still usable.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& msg, double spread)
      : Error(msg), achieved_spread(spread) {}

  double achieved_spread;
};

}  // namespace torq
