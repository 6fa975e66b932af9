#pragma once

#include <cmath>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "lrvb/expfam/family.hpp"

namespace lrvb {

/// Inverse-Gamma(alpha, beta): T(x) = (-log x, -1/x), eta = (alpha, beta),
/// log nu(x) = -log x, U = lgamma(alpha) - alpha log beta.
class InverseGammaFamily final : public Family {
 public:
  std::string name() const override { return "inverse_gamma"; }
  Index k() const override { return 2; }
  Index dim() const override { return 1; }

  bool valid(const Vector& eta) const override {
    return eta.size() == 2 && std::isfinite(eta[0]) && std::isfinite(eta[1]) && eta[0] > 0.0 && eta[1] > 0.0;
  }
  Vector suff_stats(const Vector& x) const override {
    Vector t(2);
    t << -std::log(x[0]), -1.0 / x[0];
    return t;
  }
  double log_base(const Vector& x) const override { return -std::log(x[0]); }
  double log_normalizer(const Vector& eta) const override { return std::lgamma(eta[0]) - eta[0] * std::log(eta[1]); }
  bool in_support(const Vector& x) const override { return x[0] > 0.0; }

  // x = beta / Q^{-1}(alpha, u): 1/x is Gamma(alpha, rate beta).
  Vector draw_noise(Rng& rng) const override { return Vector::Constant(1, rng.uniform_open()); }
  Vector transform(const Vector& eta, const Vector& z) const override {
    return Vector::Constant(1, eta[1] / boost::math::gamma_q_inv(eta[0], z[0]));
  }

  // dx/d beta = x / beta exactly; dx/d alpha from the inverse-transform
  // fallback with dF/d alpha by central differences. F(x) = Q(alpha, beta/x).
  bool has_jacobian() const override { return true; }
  Matrix reparam_jacobian(const Vector& eta, const Vector& z) const override {
    const double x = transform(eta, z)[0];
    const double a = eta[0], b = eta[1];
    const double dens = std::exp(-(a + 1.0) * std::log(x) - b / x - log_normalizer(eta));
    const double h = 1e-5 * std::max(1.0, a);
    const double y = b / x;
    const double dFa = (boost::math::gamma_q(a + h, y) - boost::math::gamma_q(a - h, y)) / (2.0 * h);
    Matrix J(2, 1);
    J << -dFa / dens, x / b;
    return J;
  }
  Matrix suff_stats_grad(const Vector& x) const override {
    Matrix G(1, 2);
    G << -1.0 / x[0], 1.0 / (x[0] * x[0]);
    return G;
  }
  Vector log_base_grad(const Vector& x) const override { return Vector::Constant(1, -1.0 / x[0]); }

  bool has_fisher() const override { return true; }
  Matrix analytic_fisher(const Vector& eta) const override {
    using boost::math::digamma;
    using boost::math::trigamma;
    const double a = eta[0], b = eta[1];
    // In terms of y = 1/x: T = (log y, -y).
    const double e1 = digamma(a) - std::log(b), e2 = -a / b;
    const double v1 = trigamma(a), v2 = a / (b * b), c12 = -1.0 / b;
    Matrix F(3, 3);
    F << 1.0, e1, e2,                 //
        e1, v1 + e1 * e1, c12 + e1 * e2,  //
        e2, c12 + e1 * e2, v2 + e2 * e2;
    return F;
  }
};

}  // namespace lrvb
