#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <vector>

#include "lrvb/core/linalg.hpp"
#include "lrvb/core/rng.hpp"
#include "lrvb/core/special.hpp"
#include "lrvb/models/target.hpp"
#include "lrvb/optimizer.hpp"

namespace lrvb {

/// log p(x) = log N(x; m0, P0^{-1}) + sum_j log phi_j(v_j' x).
/// Factors depend on x only through the projection f_j = v_j' x.
struct FactorTarget {
  Index dim = 0;
  Matrix proj;  // n_factors x dim, row j is v_j
  std::function<double(Index, double)> logphi;
  std::function<double(Index, double)> dlogphi;   // optional
  std::function<double(Index, double)> d2logphi;  // optional
  Vector prior_mean;
  Matrix prior_prec;

  Index n_factors() const { return proj.rows(); }
  bool has_grad() const { return static_cast<bool>(dlogphi); }
  bool has_hess() const { return static_cast<bool>(d2logphi); }

  double log_prior(const Vector& x) const {
    Eigen::LLT<Matrix> llt(prior_prec);
    Vector d = x - prior_mean;
    const double logdet = 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
    return -0.5 * d.dot(prior_prec * d) + 0.5 * logdet - 0.5 * static_cast<double>(dim) * special::kLog2Pi;
  }

  /// Target over a subset of factors, each weighted by `scale`.
  TargetModel subset_target(std::vector<Index> idx, double scale) const {
    TargetModel t;
    t.dim = dim;
    auto self = *this;
    auto sel = std::make_shared<std::vector<Index>>(std::move(idx));
    t.log_joint = [self, sel, scale](const Vector& x) {
      double s = 0.0;
      for (Index j : *sel) s += self.logphi(j, self.proj.row(j).dot(x));
      return self.log_prior(x) + scale * s;
    };
    if (has_grad())
      t.grad = [self, sel, scale](const Vector& x) {
        Vector g = -self.prior_prec * (x - self.prior_mean);
        for (Index j : *sel) g += scale * self.dlogphi(j, self.proj.row(j).dot(x)) * self.proj.row(j).transpose();
        return g;
      };
    if (has_hess())
      t.hess = [self, sel, scale](const Vector& x) {
        Matrix H = -self.prior_prec;
        for (Index j : *sel) {
          const Vector v = self.proj.row(j).transpose();
          H += scale * self.d2logphi(j, v.dot(x)) * v * v.transpose();
        }
        return H;
      };
    return t;
  }

  TargetModel full_target() const {
    std::vector<Index> all(static_cast<std::size_t>(n_factors()));
    std::iota(all.begin(), all.end(), Index{0});
    return subset_target(std::move(all), 1.0);
  }
};

/// Per-factor marginals of N(m, V): mu_j = v_j'm, s2_j = v_j'V v_j.
struct Marginals {
  Vector mu, s2;
  std::vector<bool> degenerate;  // zero projection
};

inline Marginals project_marginals(const Vector& m, const Matrix& V, const Matrix& proj) {
  Marginals out;
  out.mu = proj * m;
  out.s2 = (proj * V).cwiseProduct(proj).rowwise().sum();
  out.degenerate.resize(static_cast<std::size_t>(proj.rows()));
  for (Index j = 0; j < proj.rows(); ++j) out.degenerate[j] = proj.row(j).isZero(0.0);
  return out;
}

/// Univariate Gaussian site (eta0, eta1, eta2) for T~(f) = (1, f, -f^2/2),
/// with its own 3-dimensional regression state.
struct SiteParams {
  Vector eta = Vector::Zero(3);
  Vector g = Vector::Zero(3);
  Matrix C = Matrix::Identity(3, 3);
  Vector g_bar = Vector::Zero(3);
  Matrix C_bar = Matrix::Zero(3, 3);
  long n_avg = 0;
  long invalid = 0;
};

inline Vector site_stats(double f) {
  Vector t(3);
  t << 1.0, f, -0.5 * f * f;
  return t;
}

namespace detail {

inline bool site_apply(SiteParams& s, const Matrix& Ch, const Vector& gh, double w, bool in_avg) {
  if (!Ch.allFinite() || !gh.allFinite()) {
    ++s.invalid;
    return false;
  }
  s.g = (1.0 - w) * s.g + w * gh;
  s.C = (1.0 - w) * s.C + w * Ch;
  if (in_avg) {
    s.g_bar += gh;
    s.C_bar += Ch;
    ++s.n_avg;
  }
  Eigen::FullPivLU<Matrix> lu(s.C);
  if (!lu.isInvertible()) {
    ++s.invalid;
    return false;
  }
  Vector e = lu.solve(s.g);
  if (!e.allFinite()) {
    ++s.invalid;
    return false;
  }
  s.eta = e;
  return true;
}

}  // namespace detail

/// Same-draw site regression at f*, with regressand log phi(f*).
inline bool site_update(SiteParams& s, double f, double logphi, double w, bool in_avg = false) {
  Vector t = site_stats(f);
  return detail::site_apply(s, t * t.transpose(), t * logphi, w, in_avg);
}

/// Gradient-based site update at f* = mu + sigma z. The first row keeps the
/// intercept equation; the other two use d s / d(eta1, eta2) =
/// (sigma^2, -mu sigma^2 - sigma^3 z / 2).
inline bool site_update_gradient(SiteParams& s, double mu, double sigma, double z, double logphi, double dlogphi,
                                 double w, bool in_avg = false) {
  if (!(sigma > 0.0)) throw ParameterDomainError("site projection has zero variance");
  const double f = mu + sigma * z;
  const double d1 = sigma * sigma;
  const double d2 = -mu * sigma * sigma - 0.5 * sigma * sigma * sigma * z;
  Matrix Ch(3, 3);
  Ch << 1.0, f, -0.5 * f * f,  //
      0.0, d1, -d1 * f,        //
      0.0, d2, -d2 * f;
  Vector gh(3);
  gh << logphi, d1 * dlogphi, d2 * dlogphi;
  return detail::site_apply(s, Ch, gh, w, in_avg);
}

/// Site eta from the averaged statistics (falls back to the running value).
inline Vector site_final(const SiteParams& s) {
  if (s.n_avg == 0) return s.eta;
  Eigen::FullPivLU<Matrix> lu(s.C_bar);
  if (!lu.isInvertible()) return s.eta;
  return lu.solve(s.g_bar);
}

/// Global natural parameters: P = P0 + sum eta2 v v', h = P0 m0 + sum eta1 v.
struct GlobalNatural {
  Vector h;
  Matrix P;
};

inline GlobalNatural assemble_global(const FactorTarget& ft, const std::vector<Vector>& site_eta) {
  GlobalNatural g;
  g.P = ft.prior_prec;
  g.h = ft.prior_prec * ft.prior_mean;
  for (Index j = 0; j < ft.n_factors(); ++j) {
    const Vector v = ft.proj.row(j).transpose();
    g.P.noalias() += site_eta[j][2] * v * v.transpose();
    g.h += site_eta[j][1] * v;
  }
  return g;
}

/// Surrogate log p~ = log prior + (n/K) sum over K factors drawn without
/// replacement; a fresh subset per call to `resample`.
class Subsampler {
 public:
  Subsampler(const FactorTarget& ft, Index K) : ft_(ft), K_(K) {
    if (K < 1 || K > ft.n_factors()) throw ConfigError("subsample size must be in [1, n_factors]");
  }
  TargetModel resample(Rng& rng) const {
    std::vector<Index> idx(static_cast<std::size_t>(ft_.n_factors()));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    idx.resize(static_cast<std::size_t>(K_));
    return ft_.subset_target(std::move(idx), static_cast<double>(ft_.n_factors()) / static_cast<double>(K_));
  }

 private:
  FactorTarget ft_;
  Index K_;
};

inline Subsampler subsample_logp(const FactorTarget& ft, Index K) { return Subsampler(ft, K); }

/// Epoch-wise random permutation split into B nearly equal minibatches.
class MinibatchSchedule {
 public:
  MinibatchSchedule(Index n, Index B) : n_(n), B_(B) {
    if (B < 1 || B > n) throw ConfigError("minibatch count must be in [1, n_factors]");
  }
  std::vector<Index> next(Rng& rng) {
    if (pos_ == 0) {
      perm_.resize(static_cast<std::size_t>(n_));
      std::iota(perm_.begin(), perm_.end(), Index{0});
      std::shuffle(perm_.begin(), perm_.end(), rng.engine());
    }
    const Index lo = pos_ * n_ / B_, hi = (pos_ + 1) * n_ / B_;
    pos_ = (pos_ + 1) % B_;
    return {perm_.begin() + lo, perm_.begin() + hi};
  }
  Index batches() const { return B_; }

 private:
  Index n_, B_, pos_ = 0;
  std::vector<Index> perm_;
};

enum class SiteMode { basic, gradient };

struct FactorizedOptions {
  SiteMode mode = SiteMode::basic;
  Index minibatches = 0;  // 0 = all factors every iteration
  bool sample_sites_directly = false;
  TraceSink trace;
  double eval_budget = 0;  // in full-likelihood equivalents
};

struct FactorizedFit {
  Vector m;
  Matrix V;
  std::vector<SiteParams> sites;
  double likelihood_evals = 0;  // factor evaluations / n_factors
  long invalid_globals = 0;
};

/// Site-wise regressions, one global draw (or independent f draws) per iteration.
inline FactorizedFit run_factorized(const FactorTarget& ft, long N, std::uint64_t seed, const FactorizedOptions& opt = {}) {
  if (N < 2) throw ConfigError("factorized run needs N >= 2");
  if (opt.mode == SiteMode::gradient && !ft.has_grad()) throw UnsupportedOperation("gradient sites need factor gradients");
  const Index n = ft.n_factors();
  Rng rng = Rng(seed).split("optimizer");
  const double w = 1.0 / std::sqrt(static_cast<double>(N));
  std::vector<SiteParams> sites(static_cast<std::size_t>(n));
  std::vector<Vector> etas(static_cast<std::size_t>(n), Vector::Zero(3));

  Matrix P = ft.prior_prec;
  Eigen::LLT<Matrix> llt(P);
  Vector m = ft.prior_mean;
  Matrix V = llt.solve(Matrix::Identity(ft.dim, ft.dim));
  Matrix Lv = Eigen::LLT<Matrix>(V).matrixL();

  std::optional<MinibatchSchedule> sched;
  if (opt.minibatches > 0) sched.emplace(n, opt.minibatches);
  double evals = 0;
  long invalid_globals = 0;

  for (long t = 1; t <= N; ++t) {
    if (opt.eval_budget > 0 && evals >= opt.eval_budget) break;
    const bool in_avg = 2 * t > N;
    std::vector<Index> batch;
    if (sched) {
      batch = sched->next(rng);
    } else {
      batch.resize(static_cast<std::size_t>(n));
      std::iota(batch.begin(), batch.end(), Index{0});
    }
    Marginals mg = project_marginals(m, V, ft.proj);
    Vector x = m + Lv * rng.normal(ft.dim);
    for (Index j : batch) {
      const double sigma = std::sqrt(mg.s2[j]);
      double f, z;
      if (opt.sample_sites_directly) {
        z = rng.normal();
        f = mg.mu[j] + sigma * z;
      } else {
        f = ft.proj.row(j).dot(x);
        z = sigma > 0 ? (f - mg.mu[j]) / sigma : 0.0;
      }
      const double lp = ft.logphi(j, f);
      if (opt.mode == SiteMode::basic)
        site_update(sites[j], f, lp, w, in_avg);
      else
        site_update_gradient(sites[j], mg.mu[j], sigma, z, lp, ft.dlogphi(j, f), w, in_avg);
      etas[j] = sites[j].eta;
    }
    evals += static_cast<double>(batch.size()) / static_cast<double>(n);

    GlobalNatural gn = assemble_global(ft, etas);
    Eigen::LLT<Matrix> l2(gn.P);
    if (l2.info() == Eigen::Success) {
      m = l2.solve(gn.h);
      V = l2.solve(Matrix::Identity(ft.dim, ft.dim));
      Lv = Eigen::LLT<Matrix>(V).matrixL();
    } else {
      ++invalid_globals;
    }
    if (opt.trace) opt.trace({t, m, l2.info() != Eigen::Success, false, static_cast<long long>(evals)});
  }

  for (Index j = 0; j < n; ++j) etas[j] = site_final(sites[j]);
  GlobalNatural gn = assemble_global(ft, etas);
  Eigen::LLT<Matrix> l3(gn.P);
  if (l3.info() != Eigen::Success) throw NonConvergence("assembled precision is not positive definite; increase the number of iterations");
  FactorizedFit fit;
  fit.m = l3.solve(gn.h);
  fit.V = l3.solve(Matrix::Identity(ft.dim, ft.dim));
  fit.sites = std::move(sites);
  fit.likelihood_evals = evals;
  fit.invalid_globals = invalid_globals;
  return fit;
}

}  // namespace lrvb
