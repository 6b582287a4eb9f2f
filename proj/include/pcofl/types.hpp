#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace pcofl {

// All numerics run in double precision; bit-reproducibility contracts
// (verify, frozen snapshots) depend on a single fixed scalar type.
using Scalar = double;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;  // one sample per row
using IntVector = Eigen::VectorXi;

inline constexpr const char* kVersion = "pcofl 0.1.0";

// Error taxonomy. Shape/input/config errors are caller bugs or bad input;
// numeric errors are non-finite values detected at runtime; state errors
// are contract violations on mutable objects (e.g. training a frozen mask).
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace pcofl
