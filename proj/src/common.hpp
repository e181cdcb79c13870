#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <stdexcept>
#include <string>

namespace cocn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<double>;

// Invalid configuration or invalid user input (CLI exit code 1).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent data files (CLI exit code 1).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes reaching an operation (CLI exit code 2).
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
}

}  // namespace cocn
