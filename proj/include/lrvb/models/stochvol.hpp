#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "lrvb/core/rng.hpp"
#include "lrvb/diagnostics.hpp"
#include "lrvb/expfam/beta.hpp"
#include "lrvb/expfam/inverse_gamma.hpp"
#include "lrvb/ssm.hpp"
#include "lrvb/structured/hierarchical.hpp"

namespace lrvb::models {

/// y_t = eps_t beta exp(v_t / 2), v_t = phi v_{t-1} + sigma xi_t, stationary start.
struct SVData {
  Vector y;

  void validate() const {
    if (y.size() < 2) throw DataError("sv: need at least two observations");
    if (!y.allFinite()) throw DataError("sv: returns must be finite");
  }
};

struct SVTruth {
  double phi = 0.97, sigma = 0.15, beta = 0.65;
};

inline SVData simulate_sv(Index T, const SVTruth& p, Rng& rng, Vector* v_out = nullptr) {
  SVData d;
  d.y.resize(T);
  Vector v(T);
  v[0] = p.sigma / std::sqrt(1.0 - p.phi * p.phi) * rng.normal();
  for (Index t = 1; t < T; ++t) v[t] = p.phi * v[t - 1] + p.sigma * rng.normal();
  for (Index t = 0; t < T; ++t) d.y[t] = rng.normal() * p.beta * std::exp(0.5 * v[t]);
  if (v_out) *v_out = v;
  return d;
}

/// (phi + 1)/2 ~ Beta(20, 1.5), sigma^2 ~ Inv-Gamma(5, 0.25), flat log beta.
struct SVPrior {
  double phi_a = 20.0, phi_b = 1.5;
  double s2_a = 5.0, s2_b = 0.25;

  double log_phi(double u) const {
    return (phi_a - 1.0) * std::log(u) + (phi_b - 1.0) * std::log1p(-u) - std::lgamma(phi_a) - std::lgamma(phi_b) +
           std::lgamma(phi_a + phi_b);
  }
  double dlog_phi(double u) const { return (phi_a - 1.0) / u - (phi_b - 1.0) / (1.0 - u); }
  double log_s2(double s2) const {
    return s2_a * std::log(s2_b) - std::lgamma(s2_a) - (s2_a + 1.0) * std::log(s2) - s2_b / s2;
  }
  double dlog_s2(double s2) const { return -(s2_a + 1.0) / s2 + s2_b / (s2 * s2); }
};

/// q(u) Beta on u = (phi+1)/2; q(s2 | phi) Inv-Gamma(t0, t1 + t2 phi^2);
/// q(f | phi, s2) proportional to p(f | phi, s2) times the Gaussian site.
struct SVApprox {
  CondBlock phi_block;
  CondBlock s2_block;
  ssm::PseudoObsGaussian site;

  static Matrix s2_features(double phi, bool phi_term) {
    Matrix F = Matrix::Zero(2, phi_term ? 3 : 2);
    F(0, 0) = 1.0;
    F(1, 1) = 1.0;
    if (phi_term) F(1, 2) = phi * phi;
    return F;
  }
  Vector s2_eta(double phi) const { return s2_block.eta(Vector::Constant(1, phi)); }
  double log_q_s2(double s2, double phi) const {
    return log_density(*s2_block.family, s2_eta(phi), Vector::Constant(1, s2));
  }
  double log_q_phi(double u) const { return log_density(*phi_block.family, phi_block.theta, Vector::Constant(1, u)); }
  double mean_phi() const { return 2.0 * phi_block.theta[0] / (phi_block.theta[0] + phi_block.theta[1]) - 1.0; }
};

inline CondBlock sv_s2_block(const Vector& theta0, double phi0, bool phi_term = true) {
  auto fam = std::make_shared<InverseGammaFamily>();
  auto feat = [phi_term](const Vector& par) { return SVApprox::s2_features(par[0], phi_term); };
  auto ok = [phi_term](const Vector& th) {
    if (!(th[0] > 0.0) || !(th[1] > 0.0)) return false;
    return !phi_term || th[1] + th[2] > 0.0;
  };
  CondBlock b = make_block(fam, theta0, feat, ok);
  // Start C at F' Var[T] F around phi0, ridged so it is invertible.
  const Matrix F = SVApprox::s2_features(phi0, phi_term);
  Matrix Fi = fam->analytic_fisher(F * theta0);
  Vector e = Fi.block(1, 0, 2, 1);
  Matrix VT = Fi.bottomRightCorner(2, 2) - e * e.transpose();
  b.C = F.transpose() * VT * F;
  b.C.diagonal().array() += 1e-3 * b.C.trace() / static_cast<double>(b.C.rows());
  b.g = b.C * theta0;
  return b;
}

struct SVOptions {
  long iters = 500;
  std::uint64_t seed = 0;
  SVPrior prior;
  double fd_step = 1e-5;
  TraceSink trace;
  long long eval_budget = 0;
};

struct SVFit {
  SVApprox approx;
  long iters = 0;
  long long evals = 0;
  long rejected = 0;
};

namespace detail {

inline ssm::PseudoObsGaussian site_from(const Vector& a, const Arrowhead& P, const Vector& z) {
  return {P, a + P * z};
}

// Site precision from the likelihood Hessian at a point with zero spread.
inline ssm::SvExpectations sv_point_expectations(const Vector& f, const Vector& y) {
  ssm::SmootherResult r;
  r.mean = f;
  r.var = Vector::Zero(f.size());
  r.cov_head = Vector::Zero(y.size());
  return ssm::sv_likelihood_expectations(r, y);
}
inline Arrowhead sv_point_precision(const Vector& f, const Vector& y) { return -sv_point_expectations(f, y).hess; }
inline Vector sv_point_grad(const Vector& f, const Vector& y) { return sv_point_expectations(f, y).grad; }

}  // namespace detail

inline SVApprox sv_initial_approx(const SVData& d, const SVPrior& prior) {
  const Index T = d.y.size();
  SVApprox q;
  auto beta = std::make_shared<BetaFamily>();
  q.phi_block = make_block(beta, (Vector(2) << prior.phi_a, prior.phi_b).finished());
  const double phi0 = 2.0 * prior.phi_a / (prior.phi_a + prior.phi_b) - 1.0;
  q.s2_block = sv_s2_block((Vector(3) << prior.s2_a, prior.s2_b, 0.0).finished(), phi0);
  Vector f = Vector::Zero(T + 1);
  f[0] = 0.5 * std::log(d.y.squaredNorm() / static_cast<double>(T));
  q.site = {detail::sv_point_precision(f, d.y), Vector::Zero(T + 1)};
  q.site.eta7 = q.site.eta6 * f + detail::sv_point_grad(f, d.y);
  return q;
}

/// Stochastic fit: one (phi, s2) draw per iteration; the f block uses
/// smoothed expectations, the (phi, s2) blocks use reparameterization
/// gradients of log p(phi) + log q(y | phi, s2) - log q(s2 | phi) and
/// log p(s2) + log q(y | phi, s2), with the log normalizer differenced.
inline SVFit run_sv(const SVData& d, const SVOptions& opt = {}) {
  d.validate();
  if (opt.iters < 2) throw ConfigError("sv fit needs at least two iterations");
  const Index T = d.y.size();
  const long N = opt.iters;
  const double w = 1.0 / std::sqrt(static_cast<double>(N));
  Rng rng = Rng(opt.seed).split("optimizer");
  SVFit fit;
  SVApprox& q = fit.approx;
  q = sv_initial_approx(d, opt.prior);

  // f block state: site eta7 = a + P z.
  Vector z = Vector::Zero(T + 1);
  z[0] = 0.5 * std::log(d.y.squaredNorm() / static_cast<double>(T));
  Arrowhead P = q.site.eta6;
  Vector a = q.site.eta7 - P * z;
  Vector a_bar = Vector::Zero(T + 1), z_bar = Vector::Zero(T + 1);
  Arrowhead P_bar(T + 1);
  long f_avg = 0;

  auto logZ = [&](double phi, double s2) { return ssm::smooth({phi, s2}, q.site).log_normalizer; };

  for (long t = 1; t <= N; ++t) {
    if (opt.eval_budget > 0 && fit.evals >= opt.eval_budget) break;
    const bool in_avg = 2 * t > N;
    Draw du = q.phi_block.family->sample(q.phi_block.theta, rng);
    const double u = std::clamp(du.x[0], 1e-12, 1.0 - 1e-12);
    const double phi = 2.0 * u - 1.0;
    const Vector par = Vector::Constant(1, phi);
    Draw ds = q.s2_block.family->sample(q.s2_block.eta(par), rng);
    const double s2 = ds.x[0];
    ++fit.evals;

    ssm::SmootherResult r;
    double dZ_phi = 0.0, dZ_s2 = 0.0;
    try {
      r = ssm::smooth({phi, s2}, q.site);
      const double hp = opt.fd_step * std::min(1.0, (1.0 - std::abs(phi)) * 1e3);
      dZ_phi = (logZ(phi + hp, s2) - logZ(phi - hp, s2)) / (2.0 * hp);
      const double hs = opt.fd_step * s2;
      dZ_s2 = (logZ(phi, s2 + hs) - logZ(phi, s2 - hs)) / (2.0 * hs);
    } catch (const Error&) {
      ++fit.rejected;
      continue;
    }

    // (phi) block in u-coordinates: d/du = 2 d/dphi.
    const Vector th2 = q.s2_eta(phi);
    const double dlogq_s2_dphi = (th2[0] / th2[1] - 1.0 / s2) * 2.0 * q.s2_block.theta[2] * phi;
    const double gphi = opt.prior.dlog_phi(u) + 2.0 * (dZ_phi - dlogq_s2_dphi);
    BlockEstimate e1 = block_gradient_estimate(q.phi_block, Vector(), du.z, Vector::Constant(1, u), Vector::Constant(1, gphi));
    const double gs2 = opt.prior.dlog_s2(s2) + dZ_s2;
    BlockEstimate e2 = block_gradient_estimate(q.s2_block, par, ds.z, Vector::Constant(1, s2), Vector::Constant(1, gs2));
    ssm::SvExpectations ex = ssm::sv_likelihood_expectations(r, d.y);

    block_apply(q.phi_block, e1, w, in_avg);
    block_apply(q.s2_block, e2, w, in_avg);

    if (ex.grad.allFinite() && ex.hess.allFinite()) {
      a = (1.0 - w) * a + w * ex.grad;
      P = (1.0 - w) * P - w * ex.hess;
      z = (1.0 - w) * z + w * ex.mean;
      if (in_avg) {
        a_bar += ex.grad;
        P_bar -= ex.hess;
        z_bar += ex.mean;
        ++f_avg;
      }
      q.site = detail::site_from(a, P, z);
    } else {
      ++fit.rejected;
    }
    fit.iters = t;
    if (opt.trace) {
      Vector state(3);
      state << q.mean_phi(), q.s2_block.theta[1], q.site.eta7[0];
      opt.trace({t, state, false, false, fit.evals});
    }
  }
  if (f_avg == 0) throw NonConvergence("sv fit: no accepted steps in the averaging window; increase the iterations");
  q.phi_block.theta = block_final(q.phi_block);
  q.s2_block.theta = block_final(q.s2_block);
  const double inv = 1.0 / static_cast<double>(f_avg);
  q.site = detail::site_from(inv * a_bar, inv * P_bar, inv * z_bar);
  return fit;
}

struct SVSummary {
  double phi = 0, sigma = 0, sigma2 = 0, beta = 0;
  // E[beta] diverges when q(phi) has mass near 1 (Var[log beta | phi] grows
  // like 1/(1 - phi)^2), so the sample mean above is unstable; the median is not.
  double beta_median = 0;
  double log_beta = 0;  // E[log beta]
  Vector v;  // E[v_t]
};

/// Posterior means under q by Monte Carlo over (phi, s2) with the smoother
/// supplying E[beta | phi, s2] = exp(m_0 + V_00 / 2) and E[v | phi, s2].
inline SVSummary sv_posterior_means(const SVApprox& q, long n_draws, std::uint64_t seed) {
  Rng rng = Rng(seed).split("diagnostics");
  SVSummary s;
  const Index T = q.site.T();
  s.v = Vector::Zero(T);
  long used = 0;
  std::vector<double> lb;
  lb.reserve(static_cast<std::size_t>(n_draws));
  for (long i = 0; i < n_draws; ++i) {
    const double u = q.phi_block.family->sample(q.phi_block.theta, rng).x[0];
    const double phi = 2.0 * u - 1.0;
    const double s2 = q.s2_block.family->sample(q.s2_eta(phi), rng).x[0];
    ssm::SmootherResult r;
    try {
      r = ssm::smooth({phi, s2}, q.site);
    } catch (const Error&) {
      continue;
    }
    s.phi += phi;
    s.sigma2 += s2;
    s.sigma += std::sqrt(s2);
    s.beta += std::exp(r.mean[0] + 0.5 * r.var[0]);
    s.log_beta += r.mean[0];
    lb.push_back(r.mean[0] + std::sqrt(r.var[0]) * rng.normal());
    s.v += r.mean.tail(T);
    ++used;
  }
  if (used == 0) throw NonConvergence("sv summary: no usable draws");
  const double inv = 1.0 / static_cast<double>(used);
  s.phi *= inv;
  s.sigma2 *= inv;
  s.sigma *= inv;
  s.beta *= inv;
  s.log_beta *= inv;
  s.v *= inv;
  std::nth_element(lb.begin(), lb.begin() + static_cast<std::ptrdiff_t>(lb.size() / 2), lb.end());
  s.beta_median = std::exp(lb[lb.size() / 2]);
  return s;
}

/// E_q[log p(phi, s2, f, y) - log q(phi, s2, f)], with the f integral exact:
/// E_f[log p(y|f) - log site(f)] + log q(y | phi, s2).
inline double sv_lower_bound(const SVApprox& q, const SVData& d, const SVPrior& prior, long n_draws,
                             std::uint64_t seed) {
  Rng rng = Rng(seed).split("diagnostics");
  double acc = 0.0;
  long used = 0;
  const auto& P = q.site.eta6;
  for (long i = 0; i < n_draws; ++i) {
    const double u = q.phi_block.family->sample(q.phi_block.theta, rng).x[0];
    const double phi = 2.0 * u - 1.0;
    const double s2 = q.s2_block.family->sample(q.s2_eta(phi), rng).x[0];
    ssm::SmootherResult r;
    try {
      r = ssm::smooth({phi, s2}, q.site);
    } catch (const Error&) {
      continue;
    }
    const double ell = ssm::sv_likelihood_expectations(r, d.y).loglik;
    // E[eta7' f - f' P f / 2] under the smoothed marginals.
    const Vector& m = r.mean;
    const double tr = P.c * r.var[0] + 2.0 * P.b.dot(r.cov_head) + P.D.dot(r.var.tail(P.D.size()));
    const double esite = q.site.eta7.dot(m) - 0.5 * (m.dot(P * m) + tr);
    acc += prior.log_phi(u) + prior.log_s2(s2) - q.log_q_phi(u) - q.log_q_s2(s2, phi) + r.log_normalizer + ell - esite;
    ++used;
  }
  if (used == 0) throw NonConvergence("sv lower bound: no usable draws");
  return acc / static_cast<double>(used);
}

/// Joint target over x = (u, s2, f_0, v_1..v_T) with u = (phi + 1)/2 and a
/// flat prior on f_0 = log beta, for residual diagnostics.
inline TargetModel sv_joint_target(const SVData& d, const SVPrior& prior) {
  d.validate();
  const Index T = d.y.size();
  TargetModel t;
  t.dim = T + 3;
  t.log_joint = [d, prior, T](const Vector& x) {
    const double u = x[0], s2 = x[1];
    if (!(u > 0.0 && u < 1.0 && s2 > 0.0)) return -std::numeric_limits<double>::infinity();
    const Vector f = x.tail(T + 1);
    return prior.log_phi(u) + prior.log_s2(s2) + ssm::ar1_log_prior({2.0 * u - 1.0, s2}, f.tail(T)) +
           ssm::sv_loglik(f, d.y);
  };
  return t;
}

inline Approximation sv_approximation(const SVApprox& q) {
  const Index T = q.site.T();
  Approximation a;
  a.sample = [q, T](Rng& rng) {
    Vector x(T + 3);
    const double u = q.phi_block.family->sample(q.phi_block.theta, rng).x[0];
    const double phi = 2.0 * u - 1.0;
    const double s2 = q.s2_block.family->sample(q.s2_eta(phi), rng).x[0];
    x[0] = u;
    x[1] = s2;
    x.tail(T + 1) = ssm::sample_posterior({phi, s2}, q.site, rng);
    return x;
  };
  a.log_density = [q, T](const Vector& x) {
    const double u = x[0], s2 = x[1], phi = 2.0 * u - 1.0;
    return q.log_q_phi(u) + q.log_q_s2(s2, phi) + ssm::posterior_log_density({phi, s2}, q.site, x.tail(T + 1));
  };
  return a;
}

struct SVChainSummary {
  std::vector<double> phi, sigma2, sigma, beta;
  std::vector<double> level;  // 2 log beta + mean_t v_t, the well-identified scale
  double accept_phi = 0, accept_v = 0;
};

/// Metropolis-within-Gibbs oracle on the full joint: single-site random-walk
/// updates for each v_t and for logit((phi+1)/2) with adaptive scales during
/// burn-in, conjugate draws for sigma^2 and beta^2 (flat prior on log beta).
inline SVChainSummary sv_mcmc_oracle(const SVData& d, const SVPrior& prior, long sweeps, long burn,
                                     std::uint64_t seed) {
  d.validate();
  const Index T = d.y.size();
  Rng rng = Rng(seed).split("oracle");
  std::mt19937_64& eng = rng.engine();
  const Vector y2 = d.y.cwiseProduct(d.y);
  double phi = 0.9, s2 = 0.05;
  double beta2 = y2.mean();
  Vector v = Vector::Zero(T);
  Vector step_v = Vector::Constant(T, 0.5);
  double step_phi = 0.3;
  long acc_v = 0, tot_v = 0, acc_p = 0, tot_p = 0;
  Vector win_acc = Vector::Zero(T);
  long win_phi = 0;
  SVChainSummary out;

  auto v_cond = [&](Index t, double vt) {
    double s = -0.5 * vt - 0.5 * y2[t] * std::exp(-vt) / beta2;
    const double prev = t > 0 ? phi * v[t - 1] : 0.0;
    if (t == 0)
      s -= 0.5 * (1.0 - phi * phi) * vt * vt / s2;
    else
      s -= 0.5 * (vt - prev) * (vt - prev) / s2;
    if (t + 1 < T) s -= 0.5 * (v[t + 1] - phi * vt) * (v[t + 1] - phi * vt) / s2;
    return s;
  };
  auto phi_cond = [&](double ph) {
    double s = 0.5 * std::log1p(-ph * ph) - 0.5 * (1.0 - ph * ph) * v[0] * v[0] / s2;
    for (Index t = 1; t < T; ++t) s -= 0.5 * (v[t] - ph * v[t - 1]) * (v[t] - ph * v[t - 1]) / s2;
    const double u = 0.5 * (ph + 1.0);
    // Prior on u plus the Jacobian of the logit transform: log u + log(1-u).
    return s + prior.log_phi(u) + std::log(u) + std::log1p(-u);
  };

  for (long it = 0; it < sweeps; ++it) {
    for (Index t = 0; t < T; ++t) {
      const double cur = v[t];
      const double prop = cur + step_v[t] * rng.normal();
      const double lr = v_cond(t, prop) - v_cond(t, cur);
      ++tot_v;
      if (std::log(rng.uniform_open()) < lr) {
        v[t] = prop;
        ++acc_v;
        win_acc[t] += 1.0;
      }
    }
    {
      const double u = 0.5 * (phi + 1.0);
      const double l = std::log(u / (1.0 - u)) + step_phi * rng.normal();
      const double up = 1.0 / (1.0 + std::exp(-l));
      const double php = 2.0 * up - 1.0;
      ++tot_p;
      if (std::abs(php) < 1.0 && std::log(rng.uniform_open()) < phi_cond(php) - phi_cond(phi)) {
        phi = php;
        ++acc_p;
        ++win_phi;
      }
    }
    {
      double ss = (1.0 - phi * phi) * v[0] * v[0];
      for (Index t = 1; t < T; ++t) ss += (v[t] - phi * v[t - 1]) * (v[t] - phi * v[t - 1]);
      std::gamma_distribution<double> g(prior.s2_a + 0.5 * static_cast<double>(T), 1.0);
      s2 = (prior.s2_b + 0.5 * ss) / g(eng);
    }
    {
      double ss = 0.0;
      for (Index t = 0; t < T; ++t) ss += y2[t] * std::exp(-v[t]);
      std::gamma_distribution<double> g(0.5 * static_cast<double>(T), 1.0);
      beta2 = 0.5 * ss / g(eng);
    }
    if (it < burn && (it + 1) % 100 == 0) {
      for (Index t = 0; t < T; ++t) {
        const double rate = win_acc[t] / 100.0;
        step_v[t] *= std::exp(rate - 0.44);
      }
      step_phi *= std::exp(static_cast<double>(win_phi) / 100.0 - 0.44);
      win_acc.setZero();
      win_phi = 0;
    }
    if (it >= burn) {
      out.phi.push_back(phi);
      out.sigma2.push_back(s2);
      out.sigma.push_back(std::sqrt(s2));
      out.beta.push_back(std::sqrt(beta2));
      out.level.push_back(std::log(beta2) + v.mean());
    }
  }
  out.accept_v = static_cast<double>(acc_v) / static_cast<double>(std::max<long>(tot_v, 1));
  out.accept_phi = static_cast<double>(acc_p) / static_cast<double>(std::max<long>(tot_p, 1));
  return out;
}

/// Central interval [lo, hi] containing prob of the draws.
inline std::pair<double, double> central_interval(std::vector<double> x, double prob = 0.95) {
  std::sort(x.begin(), x.end());
  const double a = 0.5 * (1.0 - prob);
  auto at = [&](double p) {
    const double pos = p * static_cast<double>(x.size() - 1);
    const auto i = static_cast<std::size_t>(pos);
    const double f = pos - static_cast<double>(i);
    return i + 1 < x.size() ? (1.0 - f) * x[i] + f * x[i + 1] : x[i];
  };
  return {at(a), at(1.0 - a)};
}

}  // namespace lrvb::models
