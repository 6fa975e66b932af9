#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "lrvb/core/linalg.hpp"
#include "lrvb/core/rng.hpp"
#include "lrvb/core/special.hpp"
#include "lrvb/gaussvb.hpp"
#include "lrvb/models/target.hpp"

namespace lrvb {

/// One Gaussian component with its responsibility-weighted recursion state.
/// mu = -H^{-1} a + z / C, Sigma = -C H^{-1}.
struct MixComponent {
  Vector mu;
  Matrix Sigma;
  Matrix prec;  // Sigma^{-1}
  Matrix chol;  // lower factor of Sigma
  double log_det = 0.0;

  double C = 0.0;
  double g = 0.0;
  Vector a, z;
  Matrix H;
  double C_bar = 0.0, g_bar = 0.0;
  Vector a_bar, z_bar;
  Matrix H_bar;
  bool frozen = false;

  double log_pdf(const Vector& x) const {
    Vector r = x - mu;
    return -0.5 * r.dot(prec * r) - 0.5 * log_det - 0.5 * static_cast<double>(x.size()) * special::kLog2Pi;
  }
  // Sets (mu, Sigma) and the cached factors; false if Sigma is not positive definite.
  bool set_moments(const Vector& m, const Matrix& S) {
    Eigen::LLT<Matrix> llt(linalg::symmetrize(S));
    if (llt.info() != Eigen::Success || !S.allFinite() || !m.allFinite()) return false;
    mu = m;
    Sigma = linalg::symmetrize(S);
    chol = llt.matrixL();
    prec = llt.solve(Matrix::Identity(S.rows(), S.cols()));
    log_det = 2.0 * chol.diagonal().array().log().sum();
    return true;
  }
};

/// q(x) = sum_i q(u=i) N(x; mu_i, Sigma_i), q(u=i) = exp(eta_i - U(eta)).
/// The last category is the reference: eta_L = 0.
struct AuxMixture {
  Vector eta;
  std::vector<MixComponent> comps;
  long t = 1;
  long N = 0;
  double w = 0.0;
  long n_avg = 0;
  StepWarnings warnings;

  Index L() const { return static_cast<Index>(comps.size()); }
  Index dim() const { return comps.front().mu.size(); }
  double U() const { return special::log_sum_exp(eta.data(), static_cast<int>(eta.size())); }
  Vector weights() const { return (eta.array() - U()).exp(); }

  Vector sample(Rng& rng) const {
    Vector p = weights();
    const double u = rng.uniform();
    Index k = L() - 1;
    double acc = 0.0;
    for (Index i = 0; i < L(); ++i) {
      acc += p[i];
      if (u < acc) {
        k = i;
        break;
      }
    }
    const auto& c = comps[k];
    return c.mu + c.chol * rng.normal(dim());
  }
};

namespace detail {
inline Vector component_log_terms(const AuxMixture& m, const Vector& x) {
  const double U = m.U();
  Vector l(m.L());
  for (Index i = 0; i < m.L(); ++i) l[i] = m.eta[i] - U + m.comps[i].log_pdf(x);
  return l;
}
}  // namespace detail

/// log sum_i exp[log q(u=i) + log q(x | u=i)].
inline double mixture_log_density(const AuxMixture& m, const Vector& x) {
  Vector l = detail::component_log_terms(m, x);
  return special::log_sum_exp(l.data(), static_cast<int>(l.size()));
}

/// q(u=i | x) = q(x|u=i) q(u=i) / q(x).
inline Vector aux_responsibility(const AuxMixture& m, const Vector& x) {
  Vector l = detail::component_log_terms(m, x);
  const double lse = special::log_sum_exp(l.data(), static_cast<int>(l.size()));
  return (l.array() - lse).exp();
}

/// Components with means m + 0.5 sd * eps_i and covariance V, equal weights.
/// Accumulators are set so the initial (mu_i, Sigma_i) reproduce exactly.
inline AuxMixture init_mixture(const Vector& m, const Matrix& V, Index L, long N, Rng& rng) {
  if (L < 1) throw ConfigError("mixture needs at least one component");
  if (N < 2) throw ConfigError("mixture fit needs N >= 2");
  AuxMixture mix;
  mix.N = N;
  mix.w = 1.0 / std::sqrt(static_cast<double>(N));
  mix.eta = Vector::Zero(L);
  const Vector sd = V.diagonal().cwiseSqrt();
  const Index d = m.size();
  for (Index i = 0; i < L; ++i) {
    MixComponent c;
    Vector mu = L == 1 ? m : Vector(m + 0.5 * sd.cwiseProduct(rng.normal(d)));
    if (!c.set_moments(mu, V)) throw ParameterDomainError("initial mixture covariance is not positive definite");
    c.C = 1.0 / static_cast<double>(L);
    c.g = 0.0;
    c.a = Vector::Zero(d);
    c.H = -c.C * c.prec;
    c.z = c.C * mu;
    c.a_bar = Vector::Zero(d);
    c.z_bar = Vector::Zero(d);
    c.H_bar = Matrix::Zero(d, d);
    mix.comps.push_back(std::move(c));
  }
  return mix;
}

/// Splits the heaviest component into two jittered copies sharing its weight.
inline AuxMixture grow_mixture(const AuxMixture& fit, Rng& rng) {
  AuxMixture mix = fit;
  Vector p = fit.weights();
  Index k;
  p.maxCoeff(&k);
  MixComponent c = fit.comps[k];
  const Vector sd = c.Sigma.diagonal().cwiseSqrt();
  const Vector shift = 0.5 * sd.cwiseProduct(rng.normal(c.mu.size()));
  MixComponent c1 = c, c2 = c;
  c1.set_moments(c.mu + shift, c.Sigma);
  c2.set_moments(c.mu - shift, c.Sigma);
  mix.comps[k] = c1;
  mix.comps.push_back(c2);
  Vector eta(mix.L());
  eta.head(fit.L()) = fit.eta.array() - fit.U();
  eta[k] -= std::log(2.0);
  eta[mix.L() - 1] = eta[k];
  mix.eta = eta.array() - eta[mix.L() - 1];
  const Vector q = mix.weights();
  for (Index i = 0; i < mix.L(); ++i) {
    auto& ci = mix.comps[i];
    ci.C = q[i];
    ci.g = q[i] * mix.eta[i];
    ci.a = Vector::Zero(ci.mu.size());
    ci.H = -ci.C * ci.prec;
    ci.z = ci.C * ci.mu;
    ci.frozen = false;
  }
  return mix;
}

namespace detail {
inline void regauge(AuxMixture& m) {
  const double ref = m.eta[m.L() - 1];
  if (ref == 0.0) return;
  for (Index i = 0; i < m.L(); ++i) {
    m.eta[i] -= ref;
    m.comps[i].g = m.comps[i].C * m.eta[i];
  }
}
}  // namespace detail

inline constexpr double kFrozenWeight = 1e-6;

/// Weight update with Rao-Blackwellized statistics:
/// C_i += w (r_i - C_i), g_i += w (r_i [log p - log q(x) + eta_i - U] - g_i).
/// Takes the responsibilities and log q(x*) from before the step.
inline void mixture_weight_update(AuxMixture& m, double logp, const Vector& resp, double logq, bool in_avg) {
  const double w = m.w;
  const double U = m.U();
  for (Index i = 0; i < m.L(); ++i) {
    auto& c = m.comps[i];
    if (c.frozen) continue;
    const double Ch = resp[i];
    const double gh = Ch * (logp - logq + m.eta[i] - U);
    c.C = (1.0 - w) * c.C + w * Ch;
    c.g = (1.0 - w) * c.g + w * gh;
    if (in_avg) {
      c.C_bar += Ch;
      c.g_bar += gh;
    }
  }
  for (Index i = 0; i < m.L(); ++i) {
    auto& c = m.comps[i];
    if (c.frozen) continue;
    if (c.C < kFrozenWeight) {
      c.frozen = true;
      continue;
    }
    m.eta[i] = c.g / c.C;
  }
  detail::regauge(m);
}

/// Responsibility-weighted Gaussian recursion per component, with the
/// gradient and Hessian of log p + log q(u=i | x).
inline void mixture_component_update(AuxMixture& m, const Vector& x, const Vector& grad, const Matrix& hess,
                                     const Vector& resp, bool in_avg) {
  const double w = m.w;
  const Index d = x.size();
  std::vector<Vector> s(m.L());
  Vector sbar = Vector::Zero(d);
  Matrix hq = Matrix::Zero(d, d);  // Hessian of log q(x)
  for (Index j = 0; j < m.L(); ++j) {
    s[j] = -m.comps[j].prec * (x - m.comps[j].mu);
    sbar += resp[j] * s[j];
    hq += resp[j] * (s[j] * s[j].transpose() - m.comps[j].prec);
  }
  hq -= sbar * sbar.transpose();
  for (Index i = 0; i < m.L(); ++i) {
    auto& c = m.comps[i];
    if (c.frozen) continue;
    const double Ch = resp[i];
    const Vector gi = Ch * (grad + s[i] - sbar);
    const Matrix Hi = Ch * (hess - c.prec - hq);
    c.a = (1.0 - w) * c.a + w * gi;
    c.H = (1.0 - w) * c.H + w * Hi;
    c.z = (1.0 - w) * c.z + w * Ch * x;
    if (in_avg) {
      c.a_bar += gi;
      c.H_bar += Hi;
      c.z_bar += Ch * x;
    }
  }
  for (Index i = 0; i < m.L(); ++i) {
    auto& c = m.comps[i];
    if (c.frozen) continue;
    Eigen::LLT<Matrix> llt(linalg::symmetrize(-c.H));
    if (llt.info() != Eigen::Success || !c.H.allFinite()) {
      ++m.warnings.invalid;
      continue;
    }
    const Vector mu = llt.solve(c.a) + c.z / c.C;
    const Matrix S = c.C * llt.solve(Matrix::Identity(d, d));
    if (!c.set_moments(mu, S)) ++m.warnings.invalid;
  }
}

/// One iteration from the draw x*: weights then components, both using the
/// responsibilities at the pre-step parameters.
inline void mixture_step(AuxMixture& m, const Vector& x, double logp, const Vector& grad, const Matrix& hess) {
  if (m.t > m.N) throw ConfigError("mixture_step called past the final iteration");
  const bool in_avg = 2 * m.t > m.N;
  ++m.t;
  if (!std::isfinite(logp) || !grad.allFinite() || !hess.allFinite()) {
    ++m.warnings.skipped;
    return;
  }
  const Vector resp = aux_responsibility(m, x);
  const double logq = mixture_log_density(m, x);
  if (in_avg) ++m.n_avg;
  mixture_weight_update(m, logp, resp, logq, in_avg);
  mixture_component_update(m, x, grad, hess, resp, in_avg);
}

/// Parameters from the averaged accumulators; frozen components keep
/// their last running values.
inline AuxMixture finalize_mixture(const AuxMixture& s) {
  if (s.n_avg == 0) throw NonConvergence("no accepted mixture steps in the averaging window");
  AuxMixture out = s;
  const Index d = s.dim();
  for (Index i = 0; i < s.L(); ++i) {
    auto& c = out.comps[i];
    if (c.frozen || c.C_bar < kFrozenWeight * static_cast<double>(s.n_avg)) continue;
    out.eta[i] = c.g_bar / c.C_bar;
    Eigen::LLT<Matrix> llt(linalg::symmetrize(-c.H_bar));
    if (llt.info() != Eigen::Success)
      throw NonConvergence("averaged component precision is not positive definite; increase the number of iterations");
    const Vector mu = llt.solve(c.a_bar) + c.z_bar / c.C_bar;
    const Matrix S = c.C_bar * llt.solve(Matrix::Identity(d, d));
    if (!c.set_moments(mu, S)) throw NonConvergence("averaged component covariance is not positive definite");
    c.C = c.C_bar / static_cast<double>(s.n_avg);
    c.g = c.C * out.eta[i];
  }
  out.eta.array() -= out.eta[out.L() - 1];
  return out;
}

struct MixtureFit {
  AuxMixture mix;
  long long evals = 0;
};

/// Runs N iterations starting from an initialized mixture; accumulators
/// are reset so the averaging window covers this run only.
inline MixtureFit run_mixture(AuxMixture mix, const TargetModel& target, long N, std::uint64_t seed) {
  if (!target.has_grad() || !target.has_hess()) throw UnsupportedOperation("mixture fit needs gradient and Hessian");
  if (N < 2) throw ConfigError("mixture fit needs N >= 2");
  mix.N = N;
  mix.t = 1;
  mix.w = 1.0 / std::sqrt(static_cast<double>(N));
  mix.n_avg = 0;
  mix.warnings = {};
  for (auto& c : mix.comps) {
    c.C_bar = c.g_bar = 0.0;
    c.a_bar = Vector::Zero(c.mu.size());
    c.z_bar = Vector::Zero(c.mu.size());
    c.H_bar = Matrix::Zero(c.mu.size(), c.mu.size());
  }
  Rng rng = Rng(seed).split("mixture");
  long long evals = 0;
  while (mix.t <= mix.N) {
    Vector x = mix.sample(rng);
    const double lp = target.log_joint(x);
    ++evals;
    mixture_step(mix, x, lp, target.grad(x), target.hess(x));
  }
  return {finalize_mixture(mix), evals};
}

inline MixtureFit fit_mixture(const TargetModel& target, const Vector& m, const Matrix& V, Index L, long N,
                              std::uint64_t seed) {
  Rng rng = Rng(seed).split("mixture-init");
  return run_mixture(init_mixture(m, V, L, N, rng), target, N, seed);
}

/// Copy with component labels permuted: new component i is old perm[i].
inline AuxMixture permute_components(const AuxMixture& m, const std::vector<Index>& perm) {
  AuxMixture out = m;
  Vector eta(m.L());
  for (Index i = 0; i < m.L(); ++i) {
    out.comps[i] = m.comps[perm[i]];
    eta[i] = m.eta[perm[i]];
  }
  out.eta = eta.array() - eta[m.L() - 1];
  return out;
}

}  // namespace lrvb
