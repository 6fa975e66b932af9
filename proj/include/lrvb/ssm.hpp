#pragma once

#include <cmath>
#include <limits>

#include "lrvb/arrowhead.hpp"
#include "lrvb/core/linalg.hpp"
#include "lrvb/core/rng.hpp"
#include "lrvb/core/special.hpp"

namespace lrvb::ssm {

/// Stationary AR(1) prior on v_1..v_T: v_1 ~ N(0, s2/(1-phi^2)),
/// v_t | v_{t-1} ~ N(phi v_{t-1}, s2). The intercept f_0 has a flat prior.
struct Ar1 {
  double phi = 0.0;
  double sigma2 = 1.0;
};

/// Unnormalized Gaussian site exp(eta7' f - f' eta6 f / 2) on f = (f_0, v_1..v_T).
struct PseudoObsGaussian {
  Arrowhead eta6;
  Vector eta7;

  Index T() const { return eta7.size() - 1; }
  static PseudoObsGaussian empty(Index T) { return {Arrowhead(T + 1), Vector::Zero(T + 1)}; }
};

/// Marginals of q(f) proportional to p(f | phi, s2) times the site.
/// Index 0 is the intercept. log_normalizer integrates the site against the
/// prior with unit density in f_0; when the site does not touch f_0 at all,
/// f_0 is left out (its variance is reported as infinite).
struct SmootherResult {
  Vector mean;
  Vector var;
  Vector cov_head;  // Cov(f_0, v_t), length T
  double log_normalizer = 0.0;
  bool head_proper = true;
};

namespace detail {

inline void check_ar1(const Ar1& a) {
  if (!(std::abs(a.phi) < 1.0) || !(a.sigma2 > 0.0) || !std::isfinite(a.sigma2))
    throw ParameterDomainError("ssm: need |phi| < 1 and sigma2 > 0");
}

// AR(1) precision: diagonal and first off-diagonal.
inline void ar1_precision(const Ar1& a, Index T, Vector& diag, Vector& off) {
  const double s = 1.0 / a.sigma2;
  diag = Vector::Constant(T, (1.0 + a.phi * a.phi) * s);
  if (T == 1) {
    diag[0] = (1.0 - a.phi * a.phi) * s;
  } else {
    diag[0] = s;
    diag[T - 1] = s;
  }
  off = Vector::Constant(std::max<Index>(T - 1, 0), -a.phi * s);
}

inline double ar1_log_det_precision(const Ar1& a, Index T) {
  return -static_cast<double>(T) * std::log(a.sigma2) + std::log1p(-a.phi * a.phi);
}

// LDL' of a symmetric tridiagonal matrix: pivots d and multipliers l
// (l[t] couples t-1 and t, l[0] unused).
struct Tridiag {
  Vector d, l;

  bool factor(const Vector& diag, const Vector& off) {
    const Index T = diag.size();
    d.resize(T);
    l = Vector::Zero(T);
    d[0] = diag[0];
    if (!(d[0] > 0.0)) return false;
    for (Index t = 1; t < T; ++t) {
      l[t] = off[t - 1] / d[t - 1];
      d[t] = diag[t] - l[t] * off[t - 1];
      if (!(d[t] > 0.0) || !std::isfinite(d[t])) return false;
    }
    return true;
  }
  Vector solve(const Vector& r) const {
    const Index T = d.size();
    Vector y = r;
    for (Index t = 1; t < T; ++t) y[t] -= l[t] * y[t - 1];
    Vector x(T);
    x[T - 1] = y[T - 1] / d[T - 1];
    for (Index t = T - 2; t >= 0; --t) x[t] = y[t] / d[t] - l[t + 1] * x[t + 1];
    return x;
  }
  Vector inverse_diagonal() const {
    const Index T = d.size();
    Vector s(T);
    s[T - 1] = 1.0 / d[T - 1];
    for (Index t = T - 2; t >= 0; --t) s[t] = 1.0 / d[t] + l[t + 1] * l[t + 1] * s[t + 1];
    return s;
  }
  double log_det() const { return d.array().log().sum(); }
};

}  // namespace detail

/// Exact Gaussian conditioning in O(T): tridiagonal LDL' for the v block and
/// a Schur complement for the intercept.
inline SmootherResult smooth(const Ar1& ar, const PseudoObsGaussian& site) {
  detail::check_ar1(ar);
  const Index T = site.T();
  if (T < 1 || site.eta6.size() != T + 1) throw ConfigError("ssm: site dimensions do not match");
  Vector diag, off;
  detail::ar1_precision(ar, T, diag, off);
  diag += site.eta6.D;
  detail::Tridiag B;
  if (!B.factor(diag, off)) throw SingularMatrixError("ssm: combined precision is not positive definite");
  const Vector& b = site.eta6.b;
  const Vector hv = site.eta7.tail(T);
  const double h0 = site.eta7[0];
  const Vector w = B.solve(hv);
  const Vector sig = B.inverse_diagonal();
  const double half_logQ = 0.5 * detail::ar1_log_det_precision(ar, T);

  SmootherResult r;
  r.mean.resize(T + 1);
  r.var.resize(T + 1);
  r.cov_head = Vector::Zero(T);
  if (site.eta6.c == 0.0 && b.isZero(0.0) && h0 == 0.0) {
    r.head_proper = false;
    r.mean[0] = 0.0;
    r.var[0] = std::numeric_limits<double>::infinity();
    r.mean.tail(T) = w;
    r.var.tail(T) = sig;
    r.log_normalizer = half_logQ - 0.5 * B.log_det() + 0.5 * hv.dot(w);
    return r;
  }
  const Vector u = B.solve(b);
  const double s = site.eta6.c - b.dot(u);
  if (!(s > 0.0) || !std::isfinite(s)) throw SingularMatrixError("ssm: combined precision is not positive definite");
  const double f0 = (h0 - b.dot(w)) / s;
  r.mean[0] = f0;
  r.mean.tail(T) = w - u * f0;
  r.var[0] = 1.0 / s;
  r.var.tail(T) = sig + u.cwiseProduct(u) / s;
  r.cov_head = -u / s;
  r.log_normalizer = half_logQ + 0.5 * special::kLog2Pi - 0.5 * (B.log_det() + std::log(s)) + 0.5 * site.eta7.dot(r.mean);
  return r;
}

namespace detail {

// Factors of the combined precision [[c, b'], [b, B]], B tridiagonal.
struct Posterior {
  Tridiag B;
  Vector u;  // B^{-1} b
  double s = 0.0;
  SmootherResult r;
};

inline Posterior posterior(const Ar1& ar, const PseudoObsGaussian& site) {
  Posterior p;
  p.r = smooth(ar, site);
  if (!p.r.head_proper) throw SingularMatrixError("ssm: intercept marginal is improper");
  const Index T = site.T();
  Vector diag, off;
  ar1_precision(ar, T, diag, off);
  diag += site.eta6.D;
  p.B.factor(diag, off);
  p.u = p.B.solve(site.eta6.b);
  p.s = site.eta6.c - site.eta6.b.dot(p.u);
  return p;
}

}  // namespace detail

/// Exact draw from q(f) proportional to p(f | phi, s2) times the site.
inline Vector sample_posterior(const Ar1& ar, const PseudoObsGaussian& site, Rng& rng) {
  const detail::Posterior p = detail::posterior(ar, site);
  const Index T = site.T();
  Vector f(T + 1);
  const double e0 = rng.normal() / std::sqrt(p.s);
  f[0] = p.r.mean[0] + e0;
  // L' x = D^{-1/2} z gives x ~ N(0, B^{-1}).
  Vector x = rng.normal(T).cwiseQuotient(p.B.d.cwiseSqrt());
  for (Index t = T - 2; t >= 0; --t) x[t] -= p.B.l[t + 1] * x[t + 1];
  f.tail(T) = p.r.mean.tail(T) - p.u * e0 + x;
  return f;
}

/// Normalized log density of q(f) at f.
inline double posterior_log_density(const Ar1& ar, const PseudoObsGaussian& site, const Vector& f) {
  const detail::Posterior p = detail::posterior(ar, site);
  const Index T = site.T();
  const Vector r = f - p.r.mean;
  Vector diag, off;
  detail::ar1_precision(ar, T, diag, off);
  const Vector rv = r.tail(T);
  double quad = rv.dot(diag.cwiseProduct(rv)) + r.dot(site.eta6 * r);
  for (Index t = 1; t < T; ++t) quad += 2.0 * off[t - 1] * rv[t - 1] * rv[t];
  const double logdet = p.B.log_det() + std::log(p.s);
  return -0.5 * quad + 0.5 * logdet - 0.5 * static_cast<double>(T + 1) * special::kLog2Pi;
}

/// log p(v | phi, s2) for the stationary AR(1) prior.
inline double ar1_log_prior(const Ar1& ar, const Vector& v) {
  detail::check_ar1(ar);
  const Index T = v.size();
  double q = (1.0 - ar.phi * ar.phi) * v[0] * v[0];
  for (Index t = 1; t < T; ++t) q += (v[t] - ar.phi * v[t - 1]) * (v[t] - ar.phi * v[t - 1]);
  return -0.5 * q / ar.sigma2 + 0.5 * detail::ar1_log_det_precision(ar, T) - 0.5 * static_cast<double>(T) * special::kLog2Pi;
}

namespace detail {

inline SmootherResult dense_condition(const Ar1& ar, const PseudoObsGaussian& site, double kappa) {
  const Index T = site.T();
  Matrix K = Matrix::Zero(T, T);
  const double v0 = ar.sigma2 / (1.0 - ar.phi * ar.phi);
  for (Index s = 0; s < T; ++s)
    for (Index t = 0; t < T; ++t) K(s, t) = v0 * std::pow(ar.phi, static_cast<double>(std::abs(s - t)));
  // The prior covariance is block diagonal; invert the blocks separately.
  Matrix Kinv = Matrix::Zero(T + 1, T + 1);
  Kinv(0, 0) = 1.0 / kappa;
  Kinv.bottomRightCorner(T, T) = linalg::spd_inverse(K);
  const Matrix Lam = Kinv + site.eta6.to_dense();
  Eigen::LLT<Matrix> llt(Lam);
  if (llt.info() != Eigen::Success) throw SingularMatrixError("ssm: combined precision is not positive definite");
  const Matrix S = llt.solve(Matrix::Identity(T + 1, T + 1));
  SmootherResult r;
  r.mean = S * site.eta7;
  r.var = S.diagonal();
  r.cov_head = S.block(1, 0, T, 1);
  const double logdetK = std::log(kappa) + linalg::log_det_spd(K);
  const double logdetL = 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
  r.log_normalizer = -0.5 * logdetK - 0.5 * logdetL + 0.5 * site.eta7.dot(r.mean) + 0.5 * std::log(2.0 * M_PI * kappa);
  return r;
}

}  // namespace detail

/// Dense reference: full (T+1)-dimensional prior covariance with intercept
/// variance kappa, conditioned directly. The log normalizer is shifted by
/// log sqrt(2 pi kappa) to match the unit-density convention of smooth().
/// The O(1/kappa) error of the finite-variance intercept is removed by
/// Richardson extrapolation between kappa and 2 kappa unless disabled.
inline SmootherResult dense_oracle(const Ar1& ar, const PseudoObsGaussian& site, double kappa = 1e8,
                                   bool extrapolate = true) {
  detail::check_ar1(ar);
  if (site.T() > 50) throw ConfigError("dense oracle is limited to T <= 50");
  SmootherResult a = detail::dense_condition(ar, site, kappa);
  if (!extrapolate) return a;
  SmootherResult b = detail::dense_condition(ar, site, 2.0 * kappa);
  a.mean = 2.0 * b.mean - a.mean;
  a.var = 2.0 * b.var - a.var;
  a.cov_head = 2.0 * b.cov_head - a.cov_head;
  a.log_normalizer = 2.0 * b.log_normalizer - a.log_normalizer;
  return a;
}

/// Expectations of log p(y | f) = sum_t [-log(2 pi)/2 - f_0 - v_t/2 - y_t^2 exp(-v_t - 2 f_0)/2]
/// under the smoothed marginals. The Hessian is arrowhead with f_0 as head.
struct SvExpectations {
  Vector grad;
  Arrowhead hess;
  Vector mean;
  double loglik = 0.0;
};

inline SvExpectations sv_likelihood_expectations(const SmootherResult& r, const Vector& y) {
  const Index T = y.size();
  if (r.mean.size() != T + 1) throw ConfigError("ssm: smoother result does not match the data length");
  if (!r.head_proper) throw SingularMatrixError("ssm: intercept marginal is improper");
  SvExpectations e;
  e.grad = Vector::Zero(T + 1);
  e.hess = Arrowhead(T + 1);
  e.mean = r.mean;
  double ll = 0.0;
  for (Index t = 0; t < T; ++t) {
    // u = v_t + 2 f_0; E[exp(-u)] = exp(-E u + Var u / 2).
    const double mu = r.mean[t + 1] + 2.0 * r.mean[0];
    const double vu = r.var[t + 1] + 4.0 * r.var[0] + 4.0 * r.cov_head[t];
    const double ye = y[t] * y[t] * std::exp(-mu + 0.5 * vu);
    e.grad[t + 1] = -0.5 + 0.5 * ye;
    e.grad[0] += -1.0 + ye;
    e.hess.D[t] = -0.5 * ye;
    e.hess.b[t] = -ye;
    e.hess.c -= 2.0 * ye;
    ll += -special::kLogSqrt2Pi - r.mean[0] - 0.5 * r.mean[t + 1] - 0.5 * ye;
  }
  e.loglik = ll;
  return e;
}

/// log p(y | f) at a point.
inline double sv_loglik(const Vector& f, const Vector& y) {
  double s = 0.0;
  for (Index t = 0; t < y.size(); ++t) {
    const double u = f[t + 1] + 2.0 * f[0];
    s += -special::kLogSqrt2Pi - f[0] - 0.5 * f[t + 1] - 0.5 * y[t] * y[t] * std::exp(-u);
  }
  return s;
}

}  // namespace lrvb::ssm
