#pragma once

#include <cmath>
#include <limits>

#include "lrvb/models/target.hpp"

namespace lrvb::models {

/// log p(x) = log lambda - lambda x on x >= 0. In the same family as the
/// exponential approximation, so it can be recovered exactly.
inline TargetModel exp_toy_model(double lambda) {
  if (!(lambda > 0.0)) throw ConfigError("exponential toy needs lambda > 0");
  TargetModel t;
  t.dim = 1;
  t.log_joint = [lambda](const Vector& x) {
    return x[0] < 0.0 ? -std::numeric_limits<double>::infinity() : std::log(lambda) - lambda * x[0];
  };
  t.grad = [lambda](const Vector&) { return Vector::Constant(1, -lambda); };
  t.hess = [](const Vector&) { return Matrix::Zero(1, 1); };
  return t;
}

}  // namespace lrvb::models
