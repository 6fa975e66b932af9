#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/quadrature/exp_sinh.hpp>

#include "lrvb/core/types.hpp"

namespace lrvb::quad {

struct Rule {
  std::vector<double> x, w;
};

/// Gauss-Hermite nodes/weights for E[f(Z)], Z ~ N(0,1) (probabilists'
/// weighting). Golub-Welsch on the Hermite Jacobi matrix.
inline Rule gauss_hermite(int n) {
  Matrix j = Matrix::Zero(n, n);
  for (int i = 1; i < n; ++i) j(i, i - 1) = j(i - 1, i) = std::sqrt(static_cast<double>(i));
  Eigen::SelfAdjointEigenSolver<Matrix> es(j);
  Rule r;
  r.x.resize(n);
  r.w.resize(n);
  for (int i = 0; i < n; ++i) {
    r.x[i] = es.eigenvalues()[i];
    const double v = es.eigenvectors()(0, i);
    r.w[i] = v * v;
  }
  return r;
}

/// E[f(m + sqrt(v) Z)] by n-point Gauss-Hermite.
template <class F>
double normal_expect(F&& f, double m, double v, int n = 64) {
  static thread_local int cached_n = -1;
  static thread_local Rule rule;
  if (cached_n != n) {
    rule = gauss_hermite(n);
    cached_n = n;
  }
  const double s = std::sqrt(v);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += rule.w[i] * f(m + s * rule.x[i]);
  return acc;
}

/// Adaptive integral over a finite interval.
template <class F>
double integrate(F&& f, double a, double b, double tol = 1e-12) {
  boost::math::quadrature::tanh_sinh<double> ts;
  return ts.integrate(f, a, b, tol);
}

/// Adaptive integral over [a, inf).
template <class F>
double integrate_to_inf(F&& f, double a, double tol = 1e-12) {
  boost::math::quadrature::exp_sinh<double> es;
  return es.integrate([&](double t) { return f(a + t); }, 0.0, std::numeric_limits<double>::infinity(), tol);
}

}  // namespace lrvb::quad
