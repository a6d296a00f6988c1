#pragma once

#include <stdexcept>
#include <string>

namespace mlellipse {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Conic coefficients do not describe a real, non-empty ellipse.
class DegenerateConic : public Error {
 public:
  using Error::Error;
};

class ZeroVector : public Error {
 public:
  using Error::Error;
};

class EmptyInput : public Error {
 public:
  using Error::Error;
};

class NonFiniteParameters : public Error {
 public:
  using Error::Error;
};

/// A finite-difference probe landed on a non-finite function value.
class NonFiniteProbe : public Error {
 public:
  using Error::Error;
};

class DegenerateSeed : public Error {
 public:
  using Error::Error;
};

class SingularHessian : public Error {
 public:
  using Error::Error;
};

class TooFewEdgePoints : public Error {
 public:
  using Error::Error;
};

/// Scatter matrix of the fitting data is rank deficient.
class DegenerateData : public Error {
 public:
  using Error::Error;
};

class NotAnEllipse : public Error {
 public:
  using Error::Error;
};

class InvalidConfig : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mlellipse
