#pragma once

#include <Eigen/Core>

#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace bardip {

using Complex = std::complex<double>;

using RealVector = Eigen::VectorXd;
using CxVector = Eigen::VectorXcd;
using RealMatrix = Eigen::MatrixXd;
using CxMatrix = Eigen::MatrixXcd;
using CxRowMatrix = Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shapes of two operands disagree.
struct DimensionError : Error {
  using Error::Error;
};

// A simulation produced non-finite state.
struct SimulationDiverged : Error {
  using Error::Error;
};

// An optimisation produced a non-finite loss or gradient.
struct TrainingDiverged : Error {
  using Error::Error;
};

// Input file is missing, truncated, or has the wrong magic.
struct FormatError : Error {
  using Error::Error;
};

} // namespace bardip
