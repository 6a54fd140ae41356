#pragma once

#include <cstddef>
#include <exception>
#include <stdexcept>
#include <string>

namespace glmmvb {

/// Base of every error thrown by the library. Messages start with the name of
/// the operation that failed.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A Cholesky factorization hit a non-positive pivot.
///
/// `index()` is the failing pivot for dense factorizations and the failing
/// block for block-arrow factorizations (the Schur-complement corner is
/// reported as block `m`). `iteration()` is the stochastic-optimizer iteration
/// at which the failure surfaced, or -1 outside an optimizer.
class DecompositionError : public Error {
 public:
  DecompositionError(const std::string& what, std::ptrdiff_t index, long iteration = -1)
      : Error(what), index_(index), iteration_(iteration) {}

  std::ptrdiff_t index() const noexcept { return index_; }
  long iteration() const noexcept { return iteration_; }

 private:
  std::ptrdiff_t index_;
  long iteration_;
};

/// Recombined natural parameters do not describe a proper density.
class RecombinationError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class InvalidInputError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class EmptyDataError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Failure of one piece in a divide-and-recombine run.
class PieceError : public Error {
 public:
  PieceError(std::size_t piece, const std::string& what, std::exception_ptr cause = nullptr)
      : Error("fit_pieces: piece " + std::to_string(piece) + ": " + what),
        piece_(piece),
        cause_(std::move(cause)) {}

  std::size_t piece() const noexcept { return piece_; }
  std::exception_ptr cause() const noexcept { return cause_; }

 private:
  std::size_t piece_;
  std::exception_ptr cause_;
};

}  // namespace glmmvb
