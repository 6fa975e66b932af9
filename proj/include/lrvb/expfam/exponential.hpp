#pragma once

#include <cmath>

#include "lrvb/expfam/family.hpp"

namespace lrvb {

/// Exponential distribution with rate eta: T(x) = -x, U(eta) = -log eta.
class ExponentialFamily final : public Family {
 public:
  std::string name() const override { return "exponential"; }
  Index k() const override { return 1; }
  Index dim() const override { return 1; }

  bool valid(const Vector& eta) const override { return eta.size() == 1 && std::isfinite(eta[0]) && eta[0] > 0.0; }
  Vector suff_stats(const Vector& x) const override { return Vector::Constant(1, -x[0]); }
  double log_base(const Vector&) const override { return 0.0; }
  double log_normalizer(const Vector& eta) const override { return -std::log(eta[0]); }
  bool in_support(const Vector& x) const override { return x[0] >= 0.0; }

  // Noise is the uniform u of the inverse-cdf sampler.
  Vector draw_noise(Rng& rng) const override { return Vector::Constant(1, rng.uniform_open()); }
  Vector transform(const Vector& eta, const Vector& z) const override {
    return Vector::Constant(1, -std::log1p(-z[0]) / eta[0]);
  }

  bool has_jacobian() const override { return true; }
  Matrix reparam_jacobian(const Vector& eta, const Vector& z) const override {
    return Matrix::Constant(1, 1, -transform(eta, z)[0] / eta[0]);
  }
  Matrix suff_stats_grad(const Vector&) const override { return Matrix::Constant(1, 1, -1.0); }
  Vector log_base_grad(const Vector&) const override { return Vector::Zero(1); }

  bool has_fisher() const override { return true; }
  Matrix analytic_fisher(const Vector& eta) const override {
    const double r = eta[0];
    Matrix c(2, 2);
    c << 1.0, -1.0 / r, -1.0 / r, 2.0 / (r * r);
    return c;
  }
};

}  // namespace lrvb
