#pragma once

#include <stdexcept>
#include <string>

namespace ssmc {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotPositiveDefinite : public Error {
 public:
  NotPositiveDefinite() : Error("matrix is not positive definite") {}
};

class DimMismatch : public Error {
 public:
  using Error::Error;
};

class EmptyData : public Error {
 public:
  EmptyData() : Error("dataset has no observations") {}
};

class BadGroupIndex : public Error {
 public:
  using Error::Error;
};

class NegativeCount : public Error {
 public:
  using Error::Error;
};

class OutOfSupport : public Error {
 public:
  using Error::Error;
};

class InsufficientDraws : public Error {
 public:
  using Error::Error;
};

class LayoutMismatch : public Error {
 public:
  using Error::Error;
};

class UnknownScenario : public Error {
 public:
  using Error::Error;
};

class RateOverflow : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace ssmc
