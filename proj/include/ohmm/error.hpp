#pragma once

#include <stdexcept>
#include <string>

namespace ohmm {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Sequence, path or parameter shapes disagree with the model dimensions.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An exhaustive enumeration (paths, sequences, mixture terms) would exceed the configured cap.
class EnumerationCapError : public Error {
 public:
  using Error::Error;
};

/// The observed sequence has probability zero under the model.
class ZeroLikelihoodError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the domain of a special function.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Digamma system with a coefficient too close to zero to have a well-defined solution.
class DegenerateSystemError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// Moment matching hit a posterior component with (numerically) zero variance.
class CollapsedComponentError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace ohmm
