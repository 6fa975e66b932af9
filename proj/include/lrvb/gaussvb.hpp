#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "lrvb/arrowhead.hpp"
#include "lrvb/core/linalg.hpp"
#include "lrvb/core/quadrature.hpp"
#include "lrvb/core/rng.hpp"
#include "lrvb/models/target.hpp"
#include "lrvb/optimizer.hpp"

namespace lrvb {

/// Precision storage policies for the Gaussian recursion.
template <class P>
struct PrecisionOps;

template <>
struct PrecisionOps<Matrix> {
  class Factor {
   public:
    static std::optional<Factor> compute(const Matrix& p) {
      if (!p.allFinite()) return std::nullopt;
      Factor f;
      f.llt_.compute(linalg::symmetrize(p));
      if (f.llt_.info() != Eigen::Success) return std::nullopt;
      return f;
    }
    Vector solve(const Vector& r) const { return llt_.solve(r); }
    Vector solve_upper(const Vector& z) const { return llt_.matrixU().solve(z); }
    Matrix inverse() const { return llt_.solve(Matrix::Identity(llt_.rows(), llt_.rows())); }
    Vector inverse_diagonal() const { return inverse().diagonal(); }
    double log_det() const { return 2.0 * Matrix(llt_.matrixL()).diagonal().array().log().sum(); }

   private:
    Eigen::LLT<Matrix> llt_;
  };
  static Matrix zero(Index n) { return Matrix::Zero(n, n); }
  static Matrix dense(const Matrix& p) { return p; }
};

template <>
struct PrecisionOps<Arrowhead> {
  using Factor = ArrowheadFactor;
  static Arrowhead zero(Index n) { return Arrowhead(n); }
  static Matrix dense(const Arrowhead& p) { return p.to_dense(); }
};

/// Target for the Gaussian recursion: gradient and Hessian in the chosen storage.
template <class P>
struct GaussTarget {
  Index dim = 0;
  std::function<double(const Vector&)> log_joint;
  std::function<Vector(const Vector&)> grad;
  std::function<P(const Vector&)> hess;
};

inline GaussTarget<Matrix> gauss_target(const TargetModel& t) {
  if (!t.has_grad() || !t.has_hess()) throw UnsupportedOperation("Gaussian recursion needs gradient and Hessian");
  return {t.dim, t.log_joint, t.grad, t.hess};
}

/// Running (a, P, z) statistics with second-half accumulators.
template <class P = Matrix>
struct GaussRecursion {
  using Ops = PrecisionOps<P>;
  using Factor = typename Ops::Factor;

  Vector a, z, a_bar, z_bar;
  P prec, prec_bar;
  long n_avg = 0;
  Vector m;
  std::optional<Factor> factor;
  long t = 1;
  long N = 0;
  double w = 0;
  StepWarnings warnings;

  Matrix V() const { return factor->inverse(); }
  Vector draw(Rng& rng) const { return m + factor->solve_upper(rng.normal(m.size())); }
};

/// a = 0, P = V1^{-1}, z = m1.
template <class P>
GaussRecursion<P> init_gauss(const Vector& m1, const P& P1, long N) {
  if (N < 2) throw ConfigError("Gaussian recursion needs N >= 2");
  GaussRecursion<P> s;
  s.N = N;
  s.w = 1.0 / std::sqrt(static_cast<double>(N));
  s.a = Vector::Zero(m1.size());
  s.z = m1;
  s.prec = P1;
  s.a_bar = Vector::Zero(m1.size());
  s.z_bar = Vector::Zero(m1.size());
  s.prec_bar = PrecisionOps<P>::zero(m1.size());
  s.factor = GaussRecursion<P>::Factor::compute(P1);
  if (!s.factor) throw ParameterDomainError("initial precision is not positive definite");
  s.m = m1;
  return s;
}

/// One step of the recursion; returns true when the new (m, V) was accepted.
template <class P>
bool gauss_step(GaussRecursion<P>& s, const Vector& x, const Vector& grad, const P& hess) {
  if (s.t > s.N) throw ConfigError("gauss_step called past the final iteration");
  const bool in_avg = 2 * s.t > s.N;
  ++s.t;
  if (!grad.allFinite() || !hess.allFinite() || !x.allFinite()) {
    ++s.warnings.skipped;
    return false;
  }
  const double w = s.w;
  s.a = (1.0 - w) * s.a + w * grad;
  s.prec = (1.0 - w) * s.prec - w * hess;
  s.z = (1.0 - w) * s.z + w * x;
  if (in_avg) {
    s.a_bar += grad;
    s.prec_bar -= hess;
    s.z_bar += x;
    ++s.n_avg;
  }
  auto f = GaussRecursion<P>::Factor::compute(s.prec);
  if (!f) {
    ++s.warnings.invalid;
    return false;
  }
  s.factor = std::move(f);
  s.m = s.factor->solve(s.a) + s.z;
  return true;
}

template <class P>
struct GaussFit {
  Vector m;
  P prec;
  typename PrecisionOps<P>::Factor factor;
  GaussRecursion<P> state;
  long long evals = 0;

  Matrix V() const { return factor.inverse(); }
};

/// (m, P) from the averaged accumulators: P = P_bar, m = P^{-1} a_bar + z_bar.
template <class P>
GaussFit<P> finalize_gauss(const GaussRecursion<P>& s, long long evals = 0) {
  if (s.n_avg == 0) throw NonConvergence("no accepted steps in the averaging window; increase the number of iterations");
  const double inv = 1.0 / static_cast<double>(s.n_avg);
  P pbar = inv * s.prec_bar;
  auto f = GaussRecursion<P>::Factor::compute(pbar);
  if (!f) throw NonConvergence("averaged precision is not positive definite; increase the number of iterations");
  Vector m = f->solve(inv * s.a_bar) + inv * s.z_bar;
  return {m, pbar, *f, s, evals};
}

struct GaussRunOptions {
  TraceSink trace;
  long long eval_budget = 0;
};

/// Gaussian variational fit from gradients and Hessians at single draws.
template <class P>
GaussFit<P> run_gaussian_vb(const GaussTarget<P>& target, const Vector& m1, const P& P1, long N, std::uint64_t seed,
                            const GaussRunOptions& opt = {}) {
  Rng rng = Rng(seed).split("optimizer");
  GaussRecursion<P> s = init_gauss(m1, P1, N);
  long long evals = 0;
  while (s.t <= s.N) {
    if (opt.eval_budget > 0 && evals >= opt.eval_budget) break;
    Vector x = s.draw(rng);
    Vector g = target.grad(x);
    P h = target.hess(x);
    ++evals;
    const long t = s.t;
    const long inv0 = s.warnings.invalid, sk0 = s.warnings.skipped;
    gauss_step(s, x, g, h);
    if (opt.trace) opt.trace({t, s.m, s.warnings.invalid > inv0, s.warnings.skipped > sk0, evals});
  }
  try {
    return finalize_gauss(s, evals);
  } catch (const NonConvergence&) {
    if (2 * (s.warnings.invalid + s.warnings.skipped) > s.N)
      throw NonConvergence("more than half of the steps were invalid or skipped; increase the number of iterations");
    throw;
  }
}

inline GaussFit<Matrix> run_gaussian_vb(const TargetModel& target, const Vector& m1, const Matrix& V1, long N,
                                        std::uint64_t seed, const GaussRunOptions& opt = {}) {
  return run_gaussian_vb<Matrix>(gauss_target(target), m1, linalg::spd_inverse(V1), N, seed, opt);
}

struct IdentityCheck {
  double max_dev_mean = 0;  // |d/dm E[log p] - E[grad]|, max over entries
  double max_dev_var = 0;   // |d/dV E[log p] - E[hess]/2|, max over entries
  double max_z = 0;         // largest |deviation| / standard error (MC mode only)
};

/// Checks d/dm E[log p] = E[grad] and d/dV E[log p] = E[hess]/2 under
/// N(m, V) with central differences on (m, V). Uses common random numbers
/// (n_draws > 0) or a Gauss-Hermite tensor grid (n_draws == 0, dim <= 2).
inline IdentityCheck expectation_identity_check(const TargetModel& target, const Vector& m, const Matrix& V,
                                                long n_draws, std::uint64_t seed, double h = 1e-5) {
  const Index d = m.size();
  std::vector<Vector> zs;
  std::vector<double> wts;
  if (n_draws > 0) {
    Rng rng = Rng(seed).split("identity");
    for (long i = 0; i < n_draws; ++i) {
      zs.push_back(rng.normal(d));
      wts.push_back(1.0 / static_cast<double>(n_draws));
    }
  } else {
    if (d > 2) throw ConfigError("quadrature identity check supports dim <= 2");
    auto rule = quad::gauss_hermite(40);
    if (d == 1) {
      for (std::size_t i = 0; i < rule.x.size(); ++i) {
        zs.push_back(Vector::Constant(1, rule.x[i]));
        wts.push_back(rule.w[i]);
      }
    } else {
      for (std::size_t i = 0; i < rule.x.size(); ++i)
        for (std::size_t j = 0; j < rule.x.size(); ++j) {
          Vector z(2);
          z << rule.x[i], rule.x[j];
          zs.push_back(z);
          wts.push_back(rule.w[i] * rule.w[j]);
        }
    }
  }
  auto point = [&](const Vector& mm, const Matrix& VV, const Vector& z) -> Vector {
    Eigen::LLT<Matrix> llt(VV);
    return mm + Matrix(llt.matrixL()) * z;
  };
  const Eigen::LLT<Matrix> base(V);
  const Matrix L = base.matrixL();
  const std::size_t n = zs.size();

  // Per-draw differences so the MC standard error of the difference is available.
  auto assess = [&](const std::vector<double>& diff) -> std::pair<double, double> {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += wts[i] * diff[i];
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += wts[i] * (diff[i] - mean) * (diff[i] - mean);
    const double se = n_draws > 0 ? std::sqrt(var / static_cast<double>(n)) : 0.0;
    return {mean, se};
  };

  IdentityCheck out;
  // The mean equations hold draw by draw, so their spread is only
  // finite-difference error; floor the standard error accordingly.
  const double fd_floor = 1e-6;
  std::vector<Vector> xs(n);
  for (std::size_t i = 0; i < n; ++i) xs[i] = m + L * zs[i];
  std::vector<Vector> grads(n);
  std::vector<Matrix> hesses(n);
  for (std::size_t i = 0; i < n; ++i) {
    grads[i] = target.grad(xs[i]);
    hesses[i] = target.hess(xs[i]);
  }
  for (Index j = 0; j < d; ++j) {
    std::vector<double> diff(n);
    for (std::size_t i = 0; i < n; ++i) {
      Vector mp = m, mm = m;
      mp[j] += h;
      mm[j] -= h;
      const double fd = (target.log_joint(mp + L * zs[i]) - target.log_joint(mm + L * zs[i])) / (2.0 * h);
      diff[i] = fd - grads[i][j];
    }
    auto [mean, se] = assess(diff);
    out.max_dev_mean = std::max(out.max_dev_mean, std::abs(mean));
    if (n_draws > 0) out.max_z = std::max(out.max_z, std::abs(mean) / std::max(se, fd_floor));
  }
  for (Index j = 0; j < d; ++j)
    for (Index k = j; k < d; ++k) {
      Matrix dV = Matrix::Zero(d, d);
      dV(j, k) = dV(k, j) = 1.0;
      const double hv = h * std::max(1.0, std::abs(V(j, k)));
      Matrix Vp = V + hv * dV, Vm = V - hv * dV;
      std::vector<double> diff(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double fd = (target.log_joint(point(m, Vp, zs[i])) - target.log_joint(point(m, Vm, zs[i]))) / (2.0 * hv);
        // d/dt E[f] along V + t(E_jk + E_kj) equals H_jk (off-diagonal) or H_jj/2.
        const double rhs = j == k ? 0.5 * hesses[i](j, j) : hesses[i](j, k);
        diff[i] = fd - rhs;
      }
      auto [mean, se] = assess(diff);
      out.max_dev_var = std::max(out.max_dev_var, std::abs(mean));
      if (n_draws > 0) out.max_z = std::max(out.max_z, std::abs(mean) / std::max(se, fd_floor));
    }
  return out;
}

}  // namespace lrvb
