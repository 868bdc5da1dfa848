#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace structdrop {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class InvalidArgumentError : public Error {
 public:
  using Error::Error;
};

/// Jacobi sweeps exhausted before the Gram matrix became diagonal.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double off_diagonal_mass)
      : Error(what), off_diagonal_mass_(off_diagonal_mass) {}
  double off_diagonal_mass() const noexcept { return off_diagonal_mass_; }

 private:
  double off_diagonal_mass_;
};

/// A retain probability of zero makes the 1/theta rescaling undefined.
class DegenerateSchemeError : public Error {
 public:
  using Error::Error;
};

class BlockPartitionError : public Error {
 public:
  using Error::Error;
};

class InvalidSpectrumError : public Error {
 public:
  using Error::Error;
};

class DegenerateFactorError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, double learning_rate)
      : Error(what), learning_rate_(learning_rate) {}
  double learning_rate() const noexcept { return learning_rate_; }

 private:
  double learning_rate_;
};

class EnumerationTooLargeError : public Error {
 public:
  using Error::Error;
};

class RankDeficiencyError : public Error {
 public:
  using Error::Error;
};

/// A file could not be opened or written.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace structdrop
