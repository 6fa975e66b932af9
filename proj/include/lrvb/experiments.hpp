#pragma once

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "lrvb/core/parallel.hpp"
#include "lrvb/diagnostics.hpp"
#include "lrvb/estimators.hpp"
#include "lrvb/expfam/exponential.hpp"
#include "lrvb/expfam/gaussian.hpp"
#include "lrvb/factorized.hpp"
#include "lrvb/gaussvb.hpp"
#include "lrvb/models/betabin.hpp"
#include "lrvb/models/exp_toy.hpp"
#include "lrvb/models/probit.hpp"
#include "lrvb/models/stochvol.hpp"
#include "lrvb/optimizer.hpp"
#include "lrvb/structured/mixture.hpp"

namespace lrvb::experiments {

inline double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct MeanSd {
  double mean = 0, sd = 0;
  long n = 0;
};

inline MeanSd mean_sd(const std::vector<double>& v) {
  MeanSd r;
  r.n = static_cast<long>(v.size());
  if (v.empty()) return {std::nan(""), std::nan(""), 0};
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    for (double x : v) r.sd += (x - r.mean) * (x - r.mean);
    r.sd = std::sqrt(r.sd / static_cast<double>(v.size() - 1));
  }
  return r;
}

// Thinned trace: every iteration up to 20, then about 200 points.
inline bool keep_trace_row(long t, long N) { return t <= 20 || t == N || t % std::max(1L, N / 200) == 0; }

// ---------------------------------------------------------------- toy

struct ToyRun {
  FitResult fit;
  std::vector<TraceRecord> trace;
};

/// Exponential target fitted by an exponential q from eta = 1 and C = I.
inline ToyRun toy_exp(double lambda, long N, EstimatorKind kind, std::uint64_t seed, long long budget = 0,
                      bool keep_trace = false) {
  ExponentialFamily f;
  EstimatorConfig cfg;
  cfg.kind = kind;
  RunOptions opt;
  opt.C1 = Matrix::Identity(2, 2);
  opt.eval_budget = budget;
  ToyRun out;
  if (keep_trace)
    opt.trace = [&](const TraceRecord& r) {
      if (keep_trace_row(r.t, N)) out.trace.push_back(r);
    };
  out.fit = run(f, models::exp_toy_model(lambda), AugmentedParams{0.0, Vector::Ones(1)}, N, cfg, seed, opt);
  return out;
}

struct EstimatorRow {
  std::string method;
  long N = 0;
  double mean = 0, sd = 0;
  long ok = 0, failed = 0;
};

/// Repeated toy fits per estimator and iteration count. Repeat r of a given
/// (method, N) always uses the same substream.
inline std::vector<EstimatorRow> estimator_study(double lambda, const std::vector<long>& Ns,
                                                 const std::vector<EstimatorKind>& kinds, int repeats,
                                                 std::uint64_t seed) {
  std::vector<EstimatorRow> rows;
  Rng root(seed);
  for (EstimatorKind k : kinds) {
    for (long N : Ns) {
      std::vector<double> est(static_cast<std::size_t>(repeats), std::nan(""));
      const Rng base = root.split(to_string(k)).split(static_cast<std::uint64_t>(N));
      parallel_for(static_cast<std::size_t>(repeats), [&](std::size_t r) {
        const std::uint64_t s = base.split(static_cast<std::uint64_t>(r)).key();
        try {
          est[r] = toy_exp(lambda, N, k, s).fit.params.eta[0];
        } catch (const NonConvergence&) {
        }
      });
      std::vector<double> good;
      for (double e : est)
        if (std::isfinite(e)) good.push_back(e);
      MeanSd ms = mean_sd(good);
      rows.push_back({to_string(k), N, ms.mean, ms.sd, ms.n, repeats - ms.n});
    }
  }
  return rows;
}

struct RatioStudy {
  std::string method;
  int S = 0;
  double mean = 0, var = 0, se_mean = 0, max_abs_err = 0;
};

/// One-shot regression estimates of the rate at the optimum eta = lambda with
/// S draws per estimate.
inline std::vector<RatioStudy> one_shot_study(double lambda, int S, int repeats, std::uint64_t seed) {
  ExponentialFamily f;
  auto t = models::exp_toy_model(lambda);
  std::vector<RatioStudy> out;
  for (EstimatorKind k : {EstimatorKind::separate_draw, EstimatorKind::same_draw, EstimatorKind::analytic_c}) {
    EstimatorConfig cfg;
    cfg.kind = k;
    cfg.samples = S;
    Rng rng = Rng(seed).split(to_string(k));
    std::vector<double> e;
    double worst = 0.0;
    for (int r = 0; r < repeats; ++r) {
      EstimatePair p = estimate_pair(cfg, f, Vector::Constant(1, lambda), t, rng);
      double v = std::nan("");
      try {
        v = solve_pair(p)[1];
      } catch (const SingularMatrixError&) {
      }
      if (!std::isfinite(v)) continue;
      e.push_back(v);
      worst = std::max(worst, std::abs(v - lambda));
    }
    MeanSd ms = mean_sd(e);
    out.push_back({to_string(k), S, ms.mean, ms.sd * ms.sd, ms.sd / std::sqrt(static_cast<double>(ms.n)), worst});
  }
  return out;
}

// ---------------------------------------------------------------- probit

struct CurvePoint {
  std::string method;
  long t = 0;
  double evals = 0;
  double rmse = 0;
};

struct ProbitPaths {
  double rmse_basic = 0, rmse_factorized = 0, rmse_gradient = 0, rmse_hessian = 0;
  double rmse_vbem = 0;
  double evals_basic = 0, evals_factorized = 0, evals_gradient = 0, evals_hessian = 0;
  double log_score = 0, log_score_vbem = 0;
  std::optional<double> r_squared;
  FitReport report;
  Vector m;  // Hessian path
  Matrix V;
  Vector m_basic, m_factorized, m_gradient;
  std::vector<CurvePoint> curve;
};

struct ProbitOptions {
  long iters = 10000;  // one likelihood evaluation per iteration on every path
  std::uint64_t seed = 0;
  long diag_draws = 10000;
  bool basic = true;
  bool keep_curve = false;
  long long budget = 0;  // full-likelihood evaluations per path, 0 = unlimited
};

/// Every path at the same evaluation budget, scored against the true weights.
inline ProbitPaths probit_paths(const models::ProbitData& d, const ProbitOptions& o) {
  const Index M = d.m();
  const FactorTarget ft = models::probit_factors(d);
  const TargetModel target = models::probit_model(d);
  const Rng root(o.seed);
  auto sub = [&](const char* name) { return root.split(name).key(); };
  ProbitPaths p;
  // mean_of may return an empty vector for an unusable iterate
  auto tracer = [&](const std::string& name, std::function<Vector(const TraceRecord&)> mean_of) -> TraceSink {
    if (!o.keep_curve || d.true_x.size() != M) return {};
    return [&p, &d, N = o.iters, name, mean_of](const TraceRecord& r) {
      if (!keep_trace_row(r.t, N)) return;
      Vector m = mean_of(r);
      if (m.size() == d.true_x.size()) p.curve.push_back({name, r.t, static_cast<double>(r.evals), models::rmse(m, d.true_x)});
    };
  };
  const bool truth = d.true_x.size() == M;
  auto score = [&](const Vector& m) { return truth ? models::rmse(m, d.true_x) : std::nan(""); };

  GaussianFamily gf(M);
  if (o.basic) {
    EstimatorConfig cfg;
    RunOptions ro;
    ro.eval_budget = o.budget;
    ro.trace = tracer("basic", [&gf](const TraceRecord& r) -> Vector {
      try {
        return gf.moments(r.params.tail(r.params.size() - 1)).m;
      } catch (const Error&) {
        return {};
      }
    });
    FitResult fr =
        run(gf, target, AugmentedParams{0.0, gf.natural(Vector::Zero(M), Matrix::Identity(M, M))}, o.iters, cfg, sub("basic"), ro);
    p.m_basic = gf.moments(fr.params.eta).m;
    p.rmse_basic = score(p.m_basic);
    p.evals_basic = static_cast<double>(fr.evals);
  }
  FactorizedOptions fo;
  fo.mode = SiteMode::basic;
  fo.eval_budget = static_cast<double>(o.budget);
  fo.trace = tracer("factorized", [](const TraceRecord& r) { return r.params; });
  FactorizedFit ff = run_factorized(ft, o.iters, sub("factorized"), fo);
  p.m_factorized = ff.m;
  p.rmse_factorized = score(ff.m);
  p.evals_factorized = ff.likelihood_evals;
  fo.mode = SiteMode::gradient;
  fo.trace = tracer("gradient", [](const TraceRecord& r) { return r.params; });
  ff = run_factorized(ft, o.iters, sub("gradient"), fo);
  p.m_gradient = ff.m;
  p.rmse_gradient = score(ff.m);
  p.evals_gradient = ff.likelihood_evals;
  GaussRunOptions go;
  go.eval_budget = o.budget;
  go.trace = tracer("hessian", [](const TraceRecord& r) { return r.params; });
  GaussFit<Matrix> gfit = run_gaussian_vb(target, Vector::Zero(M), Matrix::Identity(M, M), o.iters, sub("hessian"), go);
  p.m = gfit.m;
  p.V = gfit.V();
  p.rmse_hessian = score(p.m);
  p.evals_hessian = static_cast<double>(gfit.evals);

  models::VbemResult vb = models::vbem_probit_baseline(d);
  p.rmse_vbem = score(vb.m);
  if (truth) {
    p.log_score = models::log_score(d.true_x, p.m, p.V);
    p.log_score_vbem = models::log_score(d.true_x, vb.m, vb.V);
  }
  p.report = diagnose(approximation(p.m, p.V), target, o.diag_draws, sub("diagnostics"));
  p.r_squared = p.report.r_squared;
  return p;
}

/// Hessian recursion over B minibatches per pass, each step using the scaled
/// subset log density. Returns the averaged fit after the given passes.
inline GaussFit<Matrix> probit_minibatch_fit(const models::ProbitData& d, Index B, long passes, std::uint64_t seed) {
  const FactorTarget ft = models::probit_factors(d);
  const Index M = d.m(), n = ft.n_factors();
  const long N = passes * static_cast<long>(B);
  Rng rng = Rng(seed).split("optimizer");
  MinibatchSchedule sched(n, B);
  GaussRecursion<Matrix> s = init_gauss(Vector::Zero(M), Matrix(Matrix::Identity(M, M)), N);
  while (s.t <= s.N) {
    std::vector<Index> batch = sched.next(rng);
    const double scale = static_cast<double>(n) / static_cast<double>(batch.size());
    TargetModel sub = ft.subset_target(std::move(batch), scale);
    Vector x = s.draw(rng);
    gauss_step(s, x, sub.grad(x), sub.hess(x));
  }
  return finalize_gauss(s, N);
}

/// Smallest number of passes (in steps of one pass, up to max_passes) at which
/// the minibatch fit's RMSE is at or below the target; nullopt if never.
inline std::optional<long> passes_to_rmse(const models::ProbitData& d, Index B, double target_rmse, long max_passes,
                                          std::uint64_t seed) {
  for (long p = 1; p <= max_passes; ++p) {
    try {
      GaussFit<Matrix> f = probit_minibatch_fit(d, B, p, seed);
      if (models::rmse(f.m, d.true_x) <= target_rmse) return p;
    } catch (const NonConvergence&) {
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------- betabin

struct ComponentRow {
  Index L = 0;
  double quad_kl = 0, half_s2 = 0, lower_bound = 0, corrected_logZ = 0;
  std::optional<double> r_squared;
  FitReport report;
};

struct BetaBinSweep {
  double log_Z = 0;
  models::GridSpec grid;
  std::vector<ComponentRow> rows;
  AuxMixture final_mix;
};

/// Mixtures with L = 1..L_max, each grown from the previous fit by splitting
/// its heaviest component, scored against quadrature.
inline BetaBinSweep betabin_sweep(const models::BetaBinData& d, Index L_max, long iters, std::uint64_t seed,
                                  long diag_draws = 20000) {
  if (L_max < 1) throw ConfigError("components must be at least 1");
  const TargetModel t = models::betabin_model(d);
  const Vector mode = models::betabin_mode(t, d);
  const models::Quadrature q = models::betabin_quadrature_auto(t, mode);
  auto [pm, pV] = q.moments();
  BetaBinSweep out;
  out.log_Z = q.log_Z;
  out.grid = q.grid;
  Rng grow = Rng(seed).split("mixture-grow");
  MixtureFit fit = fit_mixture(t, pm, pV, 1, iters, Rng(seed).split("mixture-1").key());
  for (Index L = 1; L <= L_max; ++L) {
    if (L > 1)
      fit = run_mixture(grow_mixture(fit.mix, grow), t, iters,
                        Rng(seed).split("mixture").split(static_cast<std::uint64_t>(L)).key());
    ComponentRow row;
    row.L = L;
    row.quad_kl = q.kl([&](const Vector& x) { return mixture_log_density(fit.mix, x); });
    row.report = diagnose(approximation(fit.mix), t, diag_draws, Rng(seed).split("diagnostics").key() + static_cast<std::uint64_t>(L));
    row.half_s2 = 0.5 * row.report.s2;
    row.lower_bound = row.report.lower_bound;
    row.corrected_logZ = row.report.log_marginal;
    row.r_squared = row.report.r_squared;
    out.rows.push_back(row);
  }
  out.final_mix = fit.mix;
  return out;
}

/// Stand-in for the cancer-mortality counts when no CSV is supplied: 20
/// groups, rates around 1e-3 with moderate overdispersion, sizes 500..5000.
inline models::BetaBinData betabin_fallback(std::uint64_t seed) {
  Rng rng = Rng(seed).split("data-sim");
  return models::simulate_betabin(20, 0.001, 1000.0, 500, 5000, rng);
}

// ---------------------------------------------------------------- stochvol

inline models::SVData sv_fallback(std::uint64_t seed, Index T = 200) {
  Rng rng = Rng(seed).split("data-sim");
  return models::simulate_sv(T, {}, rng);
}

struct SVRun {
  models::SVFit fit;
  models::SVSummary summary;
  FitReport report;
  double lower_bound = 0;
  std::vector<TraceRecord> trace;
};

inline SVRun stochvol(const models::SVData& d, long iters, std::uint64_t seed, long long budget = 0,
                      long diag_draws = 10000) {
  models::SVOptions o;
  o.iters = iters;
  o.seed = seed;
  o.eval_budget = budget;
  SVRun out;
  o.trace = [&](const TraceRecord& r) {
    if (keep_trace_row(r.t, iters)) out.trace.push_back(r);
  };
  out.fit = models::run_sv(d, o);
  const Rng root(seed);
  out.summary = models::sv_posterior_means(out.fit.approx, 4000, root.split("summary").key());
  out.report = diagnose(models::sv_approximation(out.fit.approx), models::sv_joint_target(d, o.prior), diag_draws,
                        root.split("diagnostics").key());
  out.lower_bound = models::sv_lower_bound(out.fit.approx, d, o.prior, 4000, root.split("bound").key());
  return out;
}

}  // namespace lrvb::experiments
