#pragma once

#include <cmath>

#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "lrvb/expfam/family.hpp"

namespace lrvb {

/// Beta(a, b): T(x) = (log x, log(1-x)), eta = (a, b),
/// log nu(x) = -log x - log(1-x), U = log B(a, b).
class BetaFamily final : public Family {
 public:
  std::string name() const override { return "beta"; }
  Index k() const override { return 2; }
  Index dim() const override { return 1; }

  bool valid(const Vector& eta) const override {
    return eta.size() == 2 && std::isfinite(eta[0]) && std::isfinite(eta[1]) && eta[0] > 0.0 && eta[1] > 0.0;
  }
  Vector suff_stats(const Vector& x) const override {
    Vector t(2);
    t << std::log(x[0]), std::log1p(-x[0]);
    return t;
  }
  double log_base(const Vector& x) const override { return -std::log(x[0]) - std::log1p(-x[0]); }
  double log_normalizer(const Vector& eta) const override {
    return std::lgamma(eta[0]) + std::lgamma(eta[1]) - std::lgamma(eta[0] + eta[1]);
  }
  bool in_support(const Vector& x) const override { return x[0] > 0.0 && x[0] < 1.0; }

  Vector draw_noise(Rng& rng) const override { return Vector::Constant(1, rng.uniform_open()); }
  Vector transform(const Vector& eta, const Vector& z) const override {
    return Vector::Constant(1, boost::math::ibeta_inv(eta[0], eta[1], z[0]));
  }

  // Inverse-transform derivative -(dF/d eta)/q, with dF/d eta by central
  // differences of the regularized incomplete beta function.
  bool has_jacobian() const override { return true; }
  Matrix reparam_jacobian(const Vector& eta, const Vector& z) const override {
    const double x = transform(eta, z)[0];
    const double a = eta[0], b = eta[1];
    const double dens = std::exp((a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - log_normalizer(eta));
    const double ha = 1e-5 * std::max(1.0, a), hb = 1e-5 * std::max(1.0, b);
    const double dFa = (cdf(a + ha, b, x) - cdf(a - ha, b, x)) / (2.0 * ha);
    const double dFb = (cdf(a, b + hb, x) - cdf(a, b - hb, x)) / (2.0 * hb);
    Matrix J(2, 1);
    J << -dFa / dens, -dFb / dens;
    return J;
  }
  Matrix suff_stats_grad(const Vector& x) const override {
    Matrix G(1, 2);
    G << 1.0 / x[0], -1.0 / (1.0 - x[0]);
    return G;
  }
  Vector log_base_grad(const Vector& x) const override {
    return Vector::Constant(1, -1.0 / x[0] + 1.0 / (1.0 - x[0]));
  }

  bool has_fisher() const override { return true; }
  Matrix analytic_fisher(const Vector& eta) const override {
    using boost::math::digamma;
    using boost::math::trigamma;
    const double a = eta[0], b = eta[1];
    const double e1 = digamma(a) - digamma(a + b), e2 = digamma(b) - digamma(a + b);
    const double v1 = trigamma(a) - trigamma(a + b), v2 = trigamma(b) - trigamma(a + b), c12 = -trigamma(a + b);
    Matrix F(3, 3);
    F << 1.0, e1, e2,                 //
        e1, v1 + e1 * e1, c12 + e1 * e2,  //
        e2, c12 + e1 * e2, v2 + e2 * e2;
    return F;
  }

 private:
  // Lower tail for small x, complement otherwise, to keep precision near 1.
  static double cdf(double a, double b, double x) {
    return x < 0.5 ? boost::math::ibeta(a, b, x) : 1.0 - boost::math::ibetac(a, b, x);
  }
};

}  // namespace lrvb
