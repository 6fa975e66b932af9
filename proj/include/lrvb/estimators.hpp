#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lrvb/core/linalg.hpp"
#include "lrvb/expfam/family.hpp"
#include "lrvb/expfam/gaussian.hpp"
#include "lrvb/models/target.hpp"

namespace lrvb {

enum class EstimatorKind { same_draw, separate_draw, analytic_c, gradient, hessian };

inline std::string to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::same_draw: return "same_draw";
    case EstimatorKind::separate_draw: return "separate_draw";
    case EstimatorKind::analytic_c: return "analytic_c";
    case EstimatorKind::gradient: return "gradient";
    case EstimatorKind::hessian: return "hessian";
  }
  return "?";
}

inline EstimatorKind parse_estimator_kind(const std::string& s) {
  if (s == "same_draw") return EstimatorKind::same_draw;
  if (s == "separate_draw") return EstimatorKind::separate_draw;
  if (s == "analytic_c" || s == "analytic_C") return EstimatorKind::analytic_c;
  if (s == "gradient") return EstimatorKind::gradient;
  if (s == "hessian") return EstimatorKind::hessian;
  throw ConfigError("unknown estimator kind: " + s);
}

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::same_draw;
  int samples = 1;
  // Each sample becomes the pair (z, -z); evaluation counts are raw.
  bool antithetic = false;
  // Optional invertible K(eta); the estimate becomes (K C, K g).
  std::function<Matrix(const Vector&)> transform;
};

struct EstimatePair {
  Matrix C;
  Vector g;
  long long draws_used = 0;
  long long nonfinite = 0;
  bool ok() const { return nonfinite == 0 && C.allFinite() && g.allFinite(); }
};

namespace detail {

inline std::vector<Vector> noise_set(const Family& f, int S, bool antithetic, Rng& rng) {
  if (antithetic && !f.has_antithetic()) throw UnsupportedOperation(f.name() + ": antithetic sampling needs a location-scale family");
  std::vector<Vector> zs;
  for (int s = 0; s < S; ++s) {
    Vector z = f.draw_noise(rng);
    if (antithetic) zs.push_back(f.mirror(z));
    zs.push_back(std::move(z));
  }
  return zs;
}

// log p(x) - log nu(x): the regressand paired with T~.
inline double regressand(const Family& f, const TargetModel& t, const Vector& x) { return t.log_joint(x) - f.log_base(x); }

}  // namespace detail

/// Monte Carlo estimate of (E[T~'T~], E[T~'(log p - log nu)]) at fixed eta.
inline EstimatePair estimate_pair(const EstimatorConfig& cfg, const Family& f, const Vector& eta, const TargetModel& target,
                                  Rng& rng) {
  f.require_valid(eta);
  if (cfg.samples < 1) throw ConfigError("estimator needs at least one sample");
  const Index K = f.k() + 1;
  EstimatePair out;
  out.C = Matrix::Zero(K, K);
  out.g = Vector::Zero(K);

  auto accumulate_g = [&](const std::vector<Vector>& zs) {
    for (const auto& z : zs) {
      Vector x = f.transform(eta, z);
      Vector t = f.augmented_stats(x);
      const double y = detail::regressand(f, target, x);
      ++out.draws_used;
      if (!std::isfinite(y)) {
        ++out.nonfinite;
        continue;
      }
      out.g += t * y;
    }
    out.g /= static_cast<double>(zs.size());
  };
  auto accumulate_C = [&](const std::vector<Vector>& zs) {
    for (const auto& z : zs) {
      Vector t = f.augmented_stats(f.transform(eta, z));
      out.C.noalias() += t * t.transpose();
    }
    out.C /= static_cast<double>(zs.size());
  };

  switch (cfg.kind) {
    case EstimatorKind::same_draw: {
      auto zs = detail::noise_set(f, cfg.samples, cfg.antithetic, rng);
      for (const auto& z : zs) {
        Vector x = f.transform(eta, z);
        Vector t = f.augmented_stats(x);
        const double y = detail::regressand(f, target, x);
        ++out.draws_used;
        out.C.noalias() += t * t.transpose();
        if (!std::isfinite(y)) {
          ++out.nonfinite;
          continue;
        }
        out.g += t * y;
      }
      out.C /= static_cast<double>(zs.size());
      out.g /= static_cast<double>(zs.size());
      break;
    }
    case EstimatorKind::separate_draw: {
      auto zc = detail::noise_set(f, cfg.samples, cfg.antithetic, rng);
      auto zg = detail::noise_set(f, cfg.samples, cfg.antithetic, rng);
      accumulate_C(zc);
      accumulate_g(zg);
      break;
    }
    case EstimatorKind::analytic_c: {
      if (!f.has_fisher()) throw UnsupportedOperation(f.name() + ": analytic_c needs an analytic second moment");
      out.C = f.analytic_fisher(eta);
      accumulate_g(detail::noise_set(f, cfg.samples, cfg.antithetic, rng));
      break;
    }
    case EstimatorKind::gradient: {
      if (!f.has_jacobian()) throw UnsupportedOperation(f.name() + ": no differentiable sampler");
      if (!target.has_grad()) throw UnsupportedOperation("gradient estimator needs the target gradient");
      // Augmented system: first row is the intercept equation
      // E[y] = eta0 + E[T] eta, the rest are the gradient equations
      // E[J grad y] = E[J grad T] eta.
      auto zs = detail::noise_set(f, cfg.samples, cfg.antithetic, rng);
      for (const auto& z : zs) {
        Vector x = f.transform(eta, z);
        Matrix J = f.reparam_jacobian(eta, z);
        const double y = detail::regressand(f, target, x);
        Vector gy = target.grad(x) - f.log_base_grad(x);
        ++out.draws_used;
        if (!std::isfinite(y) || !gy.allFinite()) {
          ++out.nonfinite;
          continue;
        }
        out.C(0, 0) += 1.0;
        out.C.block(0, 1, 1, K - 1) += f.suff_stats(x).transpose();
        out.C.block(1, 1, K - 1, K - 1) += J * f.suff_stats_grad(x);
        out.g[0] += y;
        out.g.tail(K - 1) += J * gy;
      }
      out.C /= static_cast<double>(zs.size());
      out.g /= static_cast<double>(zs.size());
      break;
    }
    case EstimatorKind::hessian: {
      // Gaussian q only. Rows are taken in (m, V) coordinates: the mean rows
      // are the gradient equations, and the covariance rows use
      // d/dV E[log p] = E[hess]/2, so that P = -hess exactly per draw.
      const auto* gf = dynamic_cast<const GaussianFamily*>(&f);
      if (!gf) throw UnsupportedOperation(f.name() + ": hessian estimator needs a Gaussian approximation");
      if (!target.has_grad() || !target.has_hess()) throw UnsupportedOperation("hessian estimator needs the target gradient and Hessian");
      const Index d = f.dim();
      auto zs = detail::noise_set(f, cfg.samples, cfg.antithetic, rng);
      for (const auto& z : zs) {
        Vector x = f.transform(eta, z);
        const double y = target.log_joint(x);
        Vector gr = target.grad(x);
        Matrix H = target.hess(x);
        ++out.draws_used;
        if (!std::isfinite(y) || !gr.allFinite() || !H.allFinite()) {
          ++out.nonfinite;
          continue;
        }
        out.C(0, 0) += 1.0;
        out.C.block(0, 1, 1, K - 1) += f.suff_stats(x).transpose();
        out.C.block(1, 1, d, K - 1) += f.suff_stats_grad(x);
        out.g[0] += y;
        out.g.segment(1, d) += gr;
        for (Index i = 0; i < d; ++i) {
          out.C(1 + d + i, 1 + d + i) -= 0.5;
          out.g[1 + d + i] += 0.5 * H(i, i);
        }
        Index p = 1 + 2 * d;
        for (Index i = 0; i < d; ++i)
          for (Index j = i + 1; j < d; ++j, ++p) {
            out.C(p, p) -= 1.0;
            out.g[p] += H(i, j);
          }
      }
      out.C /= static_cast<double>(zs.size());
      out.g /= static_cast<double>(zs.size());
      break;
    }
  }

  if (cfg.transform) {
    Matrix Km = cfg.transform(eta);
    if (Km.rows() != K || Km.cols() != K) throw ConfigError("transform has wrong shape");
    Eigen::FullPivLU<Matrix> lu(Km);
    if (!lu.isInvertible()) throw SingularMatrixError("transform matrix is singular");
    out.C = Km * out.C;
    out.g = Km * out.g;
  }
  return out;
}

/// Gradient-pair estimate (common random numbers for both moments).
inline EstimatePair estimate_gradient_pair(const Family& f, const Vector& eta, const TargetModel& target, Rng& rng,
                                           int samples = 1) {
  EstimatorConfig cfg;
  cfg.kind = EstimatorKind::gradient;
  cfg.samples = samples;
  return estimate_pair(cfg, f, eta, target, rng);
}

/// (K C, K g) built from the same draws as the plain estimate.
inline EstimatePair estimate_transformed_pair(EstimatorConfig cfg, const Family& f, const Vector& eta,
                                              std::function<Matrix(const Vector&)> K, const TargetModel& target,
                                              Rng& rng) {
  cfg.transform = std::move(K);
  return estimate_pair(cfg, f, eta, target, rng);
}

/// Solve C eta~ = g.
inline Vector solve_pair(const EstimatePair& e) { return linalg::solve(e.C, e.g); }

/// Moments of a(x) = T~(x)^2 and b(x) = T~(x) log p(x) in the single-statistic setting.
struct EstimatorMoments {
  double mean_a = 0, var_a = 0, mean_b = 0, var_b = 0, cov_ab = 0;
};

struct BiasVariance {
  double bias = 0, variance = 0;
};

struct TaylorPrediction {
  BiasVariance separate;  // eta_1
  BiasVariance same;      // eta_2
  BiasVariance analytic;  // eta_a
};

/// Second-order Taylor predictions for the three ratio estimators at S samples.
inline TaylorPrediction taylor_bias_variance(const EstimatorMoments& m, int S) {
  if (m.mean_a == 0.0) throw ConfigError("taylor_bias_variance: E[a] must be nonzero");
  const double s = static_cast<double>(S);
  const double ea = m.mean_a, eb = m.mean_b;
  const double shared_bias = m.var_a * eb / (s * ea * ea * ea);
  const double shared_var = eb * eb * m.var_a / (ea * ea * ea * ea) + m.var_b / (ea * ea);
  TaylorPrediction p;
  p.separate = {shared_bias, shared_var / s};
  p.same = {shared_bias - m.cov_ab / (s * ea * ea), (shared_var - 2.0 * eb * m.cov_ab / (ea * ea * ea)) / s};
  p.analytic = {0.0, m.var_b / (s * ea * ea)};
  return p;
}

}  // namespace lrvb
