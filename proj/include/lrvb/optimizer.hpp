#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>

#include "lrvb/core/linalg.hpp"
#include "lrvb/estimators.hpp"

namespace lrvb {

struct TraceRecord {
  long t = 0;
  Vector params;  // current eta~ (or an algorithm-specific parameter vector)
  bool invalid = false;
  bool skipped = false;
  long long evals = 0;
};
using TraceSink = std::function<void(const TraceRecord&)>;

struct StepWarnings {
  long invalid = 0;  // solve failed or proposal outside the domain
  long skipped = 0;  // non-finite estimate
};

struct RegressionState {
  Vector g;
  Matrix C;
  Vector g_bar;
  Matrix C_bar;
  long n_avg = 0;
  long t = 1;
  long N = 0;
  double w = 0;
  AugmentedParams params;
  StepWarnings warnings;
};

/// State at iteration 1: g = C eta~, w = 1/sqrt(N). C defaults to the
/// analytic second moment, else a diagonal Monte Carlo estimate.
inline RegressionState init_state(const Family& f, const AugmentedParams& prior, long N,
                                  std::optional<Matrix> C1 = std::nullopt, Rng* rng = nullptr) {
  f.require_valid(prior.eta);
  if (N < 2 * (f.k() + 1)) throw ConfigError("iterations must be at least 2(k+1) = " + std::to_string(2 * (f.k() + 1)));
  const Index K = f.k() + 1;
  RegressionState s;
  s.N = N;
  s.w = 1.0 / std::sqrt(static_cast<double>(N));
  s.params = prior;
  if (C1) {
    s.C = *C1;
  } else if (f.has_fisher()) {
    s.C = f.analytic_fisher(prior.eta);
  } else {
    Rng local(0);
    Rng& r = rng ? *rng : local;
    Vector diag = Vector::Zero(K);
    const int n = 1000;
    for (int i = 0; i < n; ++i) diag += f.augmented_stats(f.sample(prior.eta, r).x).array().square().matrix();
    s.C = (diag / n).asDiagonal();
  }
  s.g = s.C * prior.as_vector();
  s.g_bar = Vector::Zero(K);
  s.C_bar = Matrix::Zero(K, K);
  return s;
}

/// One geometric-weight update followed by eta~ = C^{-1} g.
/// Returns true when the new proposal was accepted.
inline bool step(RegressionState& s, const Family& f, const EstimatePair& e) {
  if (s.t > s.N) throw ConfigError("step called past the final iteration");
  const bool in_avg = 2 * s.t > s.N;
  ++s.t;
  if (!e.ok()) {
    ++s.warnings.skipped;
    return false;
  }
  s.g = (1.0 - s.w) * s.g + s.w * e.g;
  s.C = (1.0 - s.w) * s.C + s.w * e.C;
  if (in_avg) {
    s.g_bar += e.g;
    s.C_bar += e.C;
    ++s.n_avg;
  }
  try {
    Vector v = linalg::solve(s.C, s.g);
    AugmentedParams p = AugmentedParams::from_vector(v);
    if (!f.valid(p.eta)) {
      ++s.warnings.invalid;
      return false;
    }
    s.params = p;
    return true;
  } catch (const SingularMatrixError&) {
    ++s.warnings.invalid;
    return false;
  }
}

inline bool too_many_failures(const RegressionState& s) {
  return 2 * (s.warnings.invalid + s.warnings.skipped) > s.N;
}

/// eta-hat from the second-half averaged statistics.
inline AugmentedParams finalize(const RegressionState& s, const Family& f) {
  if (s.n_avg == 0) throw NonConvergence("no accepted steps in the averaging window; increase the number of iterations");
  Vector v;
  try {
    v = linalg::solve(s.C_bar / static_cast<double>(s.n_avg), s.g_bar / static_cast<double>(s.n_avg));
  } catch (const SingularMatrixError&) {
    throw NonConvergence("averaged statistics are singular; increase the number of iterations");
  }
  AugmentedParams p = AugmentedParams::from_vector(v);
  if (!f.valid(p.eta)) throw NonConvergence("averaged solution is outside the parameter domain; increase the number of iterations");
  return p;
}

struct RunOptions {
  std::optional<Matrix> C1;
  TraceSink trace;
  long long eval_budget = 0;  // 0 = unlimited
};

struct FitResult {
  AugmentedParams params;
  RegressionState state;
  long long evals = 0;
};

/// Fixed-point stochastic iteration with constant step 1/sqrt(N) and
/// second-half averaging. Deterministic given seed.
inline FitResult run(const Family& f, const TargetModel& target, const AugmentedParams& prior, long N,
                     const EstimatorConfig& cfg, std::uint64_t seed, const RunOptions& opt = {}) {
  Rng root(seed);
  Rng init_rng = root.split("init");
  Rng rng = root.split("optimizer");
  RegressionState s = init_state(f, prior, N, opt.C1, &init_rng);
  long long evals = 0;
  while (s.t <= s.N) {
    if (opt.eval_budget > 0 && evals >= opt.eval_budget) break;
    EstimatePair e = estimate_pair(cfg, f, s.params.eta, target, rng);
    evals += e.draws_used;
    const long t = s.t;
    const long inv0 = s.warnings.invalid, sk0 = s.warnings.skipped;
    step(s, f, e);
    if (opt.trace)
      opt.trace({t, s.params.as_vector(), s.warnings.invalid > inv0, s.warnings.skipped > sk0, evals});
  }
  try {
    return {finalize(s, f), s, evals};
  } catch (const NonConvergence&) {
    if (too_many_failures(s))
      throw NonConvergence("more than half of the steps were invalid or skipped; increase the number of iterations");
    throw;
  }
}

}  // namespace lrvb
