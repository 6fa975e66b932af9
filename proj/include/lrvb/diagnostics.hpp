#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lrvb/core/rng.hpp"
#include "lrvb/core/special.hpp"
#include "lrvb/expfam/family.hpp"
#include "lrvb/models/target.hpp"
#include "lrvb/structured/mixture.hpp"

namespace lrvb {

/// Anything that can be sampled and evaluated: a fitted approximation.
struct Approximation {
  std::function<Vector(Rng&)> sample;
  std::function<double(const Vector&)> log_density;
};

inline Approximation approximation(FamilyPtr f, const Vector& eta) {
  f->require_valid(eta);
  return {[f, eta](Rng& rng) { return f->sample(eta, rng).x; },
          [f, eta](const Vector& x) { return log_density(*f, eta, x); }};
}

inline Approximation approximation(const Vector& m, const Matrix& V) {
  Eigen::LLT<Matrix> llt(V);
  if (llt.info() != Eigen::Success) throw ParameterDomainError("approximation covariance is not positive definite");
  Matrix L = llt.matrixL();
  Matrix P = llt.solve(Matrix::Identity(V.rows(), V.cols()));
  const double logdet = 2.0 * L.diagonal().array().log().sum();
  return {[m, L](Rng& rng) { return Vector(m + L * rng.normal(m.size())); },
          [m, P, logdet](const Vector& x) {
            Vector r = x - m;
            return -0.5 * r.dot(P * r) - 0.5 * logdet - 0.5 * static_cast<double>(x.size()) * special::kLog2Pi;
          }};
}

inline Approximation approximation(const AuxMixture& mix) {
  return {[mix](Rng& rng) { return mix.sample(rng); }, [mix](const Vector& x) { return mixture_log_density(mix, x); }};
}

/// Moments of d(x) = log p(x) - log q(x) under fresh draws x ~ q.
struct ResidualStats {
  double mean_d = 0.0;    // lower-bound estimate
  double s2 = 0.0;        // var_q[d]
  double var_logp = 0.0;  // var_q[log p]
  double skewness = 0.0;  // of r = d - mean_d
  double log_mean_exp_r = 0.0;
  long n_used = 0;
  long n_excluded = 0;
  // Standard errors from per-draw influence functions.
  double se_mean = 0.0, se_s2 = 0.0, se_r2 = 0.0, se_log_marginal = 0.0;
};

inline ResidualStats residual_stats(const Approximation& q, const TargetModel& target, long n_draws, std::uint64_t seed) {
  if (n_draws < 100) throw ConfigError("residual statistics need at least 100 draws");
  Rng rng = Rng(seed).split("diagnostics");
  std::vector<double> d, lp;
  d.reserve(n_draws);
  lp.reserve(n_draws);
  ResidualStats s;
  for (long i = 0; i < n_draws; ++i) {
    Vector x = q.sample(rng);
    const double p = target.log_joint(x);
    const double lq = q.log_density(x);
    if (!std::isfinite(p) || !std::isfinite(lq)) {
      ++s.n_excluded;
      continue;
    }
    d.push_back(p - lq);
    lp.push_back(p);
  }
  const auto n = static_cast<long>(d.size());
  s.n_used = n;
  if (n < 2) throw NonConvergence("too few finite draws for residual statistics");
  const double dn = static_cast<double>(n);
  double md = 0.0, mp = 0.0;
  for (long i = 0; i < n; ++i) {
    md += d[i];
    mp += lp[i];
  }
  md /= dn;
  mp /= dn;
  double s2 = 0.0, vp = 0.0, m3 = 0.0;
  for (long i = 0; i < n; ++i) {
    const double r = d[i] - md, e = lp[i] - mp;
    s2 += r * r;
    vp += e * e;
    m3 += r * r * r;
  }
  s2 /= dn;
  vp /= dn;
  m3 /= dn;
  s.mean_d = md;
  s.s2 = s2;
  s.var_logp = vp;
  s.skewness = s2 > 0.0 ? m3 / std::pow(s2, 1.5) : 0.0;

  std::vector<double> r(n);
  for (long i = 0; i < n; ++i) r[i] = d[i] - md;
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : r) mx = std::max(mx, v);
  double acc = 0.0;
  for (double v : r) acc += std::exp(v - mx);
  s.log_mean_exp_r = mx + std::log(acc / dn);

  auto se_of = [&](auto infl) {
    double m = 0.0;
    for (long i = 0; i < n; ++i) m += infl(i);
    m /= dn;
    double v = 0.0;
    for (long i = 0; i < n; ++i) {
      const double a = infl(i) - m;
      v += a * a;
    }
    return std::sqrt(v / (dn - 1.0) / dn);
  };
  s.se_mean = std::sqrt(s2 / dn);
  s.se_s2 = se_of([&](long i) { return r[i] * r[i]; });
  s.se_log_marginal = se_of([&](long i) { return d[i] + 0.5 * r[i] * r[i]; });
  if (vp > 0.0)
    s.se_r2 = se_of([&](long i) {
      const double e = lp[i] - mp;
      return -(r[i] * r[i]) / vp + s2 * (e * e) / (vp * vp);
    });
  return s;
}

struct FitReport {
  double lower_bound = 0.0;
  double s2 = 0.0;
  double kl_estimate = 0.0;
  std::optional<double> r_squared;
  double log_marginal = 0.0;
  long n_draws = 0;
  long n_excluded = 0;
  double skewness = 0.0;
  double var_logp = 0.0;
  double log_mean_exp_r = 0.0;
  double mc_se_lower_bound = 0.0;
  double mc_se_s2 = 0.0;
  double mc_se_kl_estimate = 0.0;
  std::optional<double> mc_se_r_squared;
  double mc_se_log_marginal = 0.0;

  /// Flat (name, value) list; missing values are nullopt.
  std::vector<std::pair<std::string, std::optional<double>>> fields() const {
    return {{"lower_bound", lower_bound},
            {"s2", s2},
            {"kl_estimate", kl_estimate},
            {"r_squared", r_squared},
            {"log_marginal", log_marginal},
            {"n_draws", static_cast<double>(n_draws)},
            {"n_excluded", static_cast<double>(n_excluded)},
            {"skewness", skewness},
            {"var_logp", var_logp},
            {"log_mean_exp_r", log_mean_exp_r},
            {"mc_se_lower_bound", mc_se_lower_bound},
            {"mc_se_s2", mc_se_s2},
            {"mc_se_kl_estimate", mc_se_kl_estimate},
            {"mc_se_r_squared", mc_se_r_squared},
            {"mc_se_log_marginal", mc_se_log_marginal}};
  }
};

/// log_marginal = lower_bound + s2/2, kl_estimate = s2/2, R^2 = 1 - s2/var_q[log p].
inline FitReport fit_report(const ResidualStats& s) {
  FitReport f;
  f.lower_bound = s.mean_d;
  f.s2 = s.s2;
  f.kl_estimate = 0.5 * s.s2;
  f.log_marginal = s.mean_d + 0.5 * s.s2;
  f.n_draws = s.n_used;
  f.n_excluded = s.n_excluded;
  f.skewness = s.skewness;
  f.var_logp = s.var_logp;
  f.log_mean_exp_r = s.log_mean_exp_r;
  f.mc_se_lower_bound = s.se_mean;
  f.mc_se_s2 = s.se_s2;
  f.mc_se_kl_estimate = 0.5 * s.se_s2;
  f.mc_se_log_marginal = s.se_log_marginal;
  if (s.var_logp > 0.0) {
    f.r_squared = 1.0 - s.s2 / s.var_logp;
    f.mc_se_r_squared = s.se_r2;
  } else if (s.s2 == 0.0) {
    f.r_squared = 1.0;
    f.mc_se_r_squared = 0.0;
  }
  return f;
}

inline FitReport diagnose(const Approximation& q, const TargetModel& target, long n_draws = 10000,
                          std::uint64_t seed = 0) {
  return fit_report(residual_stats(q, target, n_draws, seed));
}

}  // namespace lrvb
