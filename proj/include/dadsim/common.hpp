#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace dadsim {

using Index = std::ptrdiff_t;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
/// Time-major storage: one row per time step.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid user-supplied configuration or arguments (CLI exit code 1).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Mismatched dimensions between arguments.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A closed-loop rollout produced a non-finite state.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, Index step) : Error(what), step_(step) {}
  Index step() const noexcept { return step_; }

 private:
  Index step_;
};

/// Numerical failure during training (NaN loss, non-finite gradient).
class NumericError : public Error {
 public:
  using Error::Error;
};

template <class Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

inline std::string shape_str(Index rows, Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

}  // namespace dadsim
