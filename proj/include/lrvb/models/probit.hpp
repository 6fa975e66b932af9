#pragma once

#include <cmath>
#include <vector>

#include "lrvb/core/linalg.hpp"
#include "lrvb/core/quadrature.hpp"
#include "lrvb/core/rng.hpp"
#include "lrvb/core/special.hpp"
#include "lrvb/factorized.hpp"
#include "lrvb/models/target.hpp"

namespace lrvb::models {

/// Binary probit data: P(y_i = 1 | v_i, x) = Phi(x' v_i).
struct ProbitData {
  Vector y;  // 0/1
  Matrix V;  // N x M
  Vector true_x;

  Index n() const { return V.rows(); }
  Index m() const { return V.cols(); }
  double sign(Index i) const { return 2.0 * y[i] - 1.0; }

  void validate() const {
    if (y.size() != V.rows()) throw DataError("probit: y and design row counts differ");
    if (V.rows() < V.cols()) throw DataError("probit: need at least as many observations as covariates");
    if (!V.allFinite()) throw DataError("probit: design matrix has non-finite entries");
    for (Index i = 0; i < y.size(); ++i)
      if (y[i] != 0.0 && y[i] != 1.0) throw DataError("probit: y must be 0 or 1");
  }
};

/// x ~ N(0, I), V_ij ~ N(0, 1), y_i ~ Bernoulli(Phi(x' v_i)).
inline ProbitData simulate_probit(Index N, Index M, Rng& rng) {
  ProbitData d;
  d.true_x = rng.normal(M);
  d.V.resize(N, M);
  for (Index i = 0; i < N; ++i)
    for (Index j = 0; j < M; ++j) d.V(i, j) = rng.normal();
  d.y.resize(N);
  for (Index i = 0; i < N; ++i) d.y[i] = rng.uniform() < special::norm_cdf(d.V.row(i).dot(d.true_x)) ? 1.0 : 0.0;
  return d;
}

/// Likelihood factors in terms of f_i = v_i' x, plus the N(0, I) prior.
inline FactorTarget probit_factors(const ProbitData& d) {
  d.validate();
  FactorTarget ft;
  ft.dim = d.m();
  ft.proj = d.V;
  Vector s = 2.0 * d.y.array() - 1.0;
  ft.logphi = [s](Index i, double f) { return special::log_norm_cdf(s[i] * f); };
  ft.dlogphi = [s](Index i, double f) { return s[i] * special::dlog_norm_cdf(s[i] * f); };
  ft.d2logphi = [s](Index i, double f) { return special::d2log_norm_cdf(s[i] * f); };
  ft.prior_mean = Vector::Zero(d.m());
  ft.prior_prec = Matrix::Identity(d.m(), d.m());
  return ft;
}

inline TargetModel probit_model(const ProbitData& d) { return probit_factors(d).full_target(); }

/// Log density of the true weights under N(m, V).
inline double log_score(const Vector& x, const Vector& m, const Matrix& V) {
  Eigen::LLT<Matrix> llt(V);
  Vector r = x - m;
  const double logdet = 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
  return -0.5 * r.dot(llt.solve(r)) - 0.5 * logdet - 0.5 * static_cast<double>(x.size()) * special::kLog2Pi;
}

inline double rmse(const Vector& a, const Vector& b) { return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size())); }

struct VbemResult {
  Vector m;
  Matrix V;
  std::vector<double> lower_bound;
  bool converged = false;
  int iterations = 0;
};

/// Coordinate-ascent VB with truncated-normal auxiliaries z_i ~ N(x'v_i, 1).
/// q(x) has fixed covariance (I + V'V)^{-1}; each sweep updates E[z] then the mean.
inline VbemResult vbem_probit_baseline(const ProbitData& d, int max_iters = 1000, double tol = 1e-10) {
  d.validate();
  const Index M = d.m();
  Matrix A = Matrix::Identity(M, M) + d.V.transpose() * d.V;
  Eigen::LLT<Matrix> llt(A);
  VbemResult r;
  r.V = llt.solve(Matrix::Identity(M, M));
  const double half_logdet = Matrix(llt.matrixL()).diagonal().array().log().sum();
  r.m = Vector::Zero(M);
  auto bound = [&](const Vector& mu) {
    Vector f = d.V * mu;
    double s = 0.0;
    for (Index i = 0; i < d.n(); ++i) s += special::log_norm_cdf(d.sign(i) * f[i]);
    return s - 0.5 * mu.squaredNorm() - half_logdet;
  };
  r.lower_bound.push_back(bound(r.m));
  for (int it = 0; it < max_iters; ++it) {
    Vector f = d.V * r.m;
    Vector ez(d.n());
    for (Index i = 0; i < d.n(); ++i) ez[i] = f[i] + d.sign(i) * special::hazard(d.sign(i) * f[i]);
    r.m = r.V * (d.V.transpose() * ez);
    r.lower_bound.push_back(bound(r.m));
    r.iterations = it + 1;
    const double change = r.lower_bound.back() - r.lower_bound[r.lower_bound.size() - 2];
    if (std::abs(change) < tol) {
      r.converged = true;
      break;
    }
  }
  return r;
}

struct GaussianFit {
  Vector m;
  Matrix V;
  bool converged = false;
};

/// Deterministic Gaussian VB fixed point for the probit posterior, with
/// E_q over each factor computed by 1-D Gauss-Hermite quadrature:
///   P = I + sum_i v_i v_i' E[-d2 log Phi],  E[grad log p] = 0.
inline GaussianFit probit_exact_gaussian_vb(const ProbitData& d, int max_iters = 500, double tol = 1e-13) {
  FactorTarget ft = probit_factors(d);
  const Index M = d.m();
  GaussianFit out;
  out.m = Vector::Zero(M);
  out.V = Matrix::Identity(M, M);
  for (int it = 0; it < max_iters; ++it) {
    Marginals mg = project_marginals(out.m, out.V, d.V);
    Matrix P = Matrix::Identity(M, M);
    Vector grad = -out.m;
    for (Index i = 0; i < d.n(); ++i) {
      const Vector v = d.V.row(i).transpose();
      const double e1 = quad::normal_expect([&](double f) { return ft.dlogphi(i, f); }, mg.mu[i], mg.s2[i], 48);
      const double e2 = quad::normal_expect([&](double f) { return ft.d2logphi(i, f); }, mg.mu[i], mg.s2[i], 48);
      P.noalias() -= e2 * v * v.transpose();
      grad += e1 * v;
    }
    Eigen::LLT<Matrix> llt(P);
    Vector step = llt.solve(grad);
    out.m += step;
    out.V = llt.solve(Matrix::Identity(M, M));
    if (step.norm() < tol) {
      out.converged = true;
      break;
    }
  }
  return out;
}

}  // namespace lrvb::models
