#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace lrvb {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

// Error taxonomy. Everything derives from Error so callers can catch broadly.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Natural parameters outside the family's valid domain.
struct ParameterDomainError : Error {
  using Error::Error;
};

// The family or target does not provide the requested capability.
struct UnsupportedOperation : Error {
  using Error::Error;
};

// A matrix that must be invertible or positive definite is not.
struct SingularMatrixError : Error {
  using Error::Error;
};

// The stochastic iteration failed to produce a usable answer; increase N.
struct NonConvergence : Error {
  using Error::Error;
};

struct DataError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

}  // namespace lrvb
