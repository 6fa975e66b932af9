#include <gtest/gtest.h>

#include <bit>
#include <cmath>

#include "lrvb/core/quadrature.hpp"
#include "lrvb/factorized.hpp"
#include "lrvb/models/probit.hpp"

using namespace lrvb;

namespace {

// One Gaussian-likelihood factor: log phi(f) = alpha f - beta f^2/2 + c.
FactorTarget conjugate_single(double alpha, double beta, double c, Index dim) {
  FactorTarget ft;
  ft.dim = dim;
  ft.proj = Matrix::Zero(1, dim);
  ft.proj.row(0) = Vector::LinSpaced(dim, 1.0, 0.5).transpose();
  ft.logphi = [=](Index, double f) { return alpha * f - 0.5 * beta * f * f + c; };
  ft.dlogphi = [=](Index, double f) { return alpha - beta * f; };
  ft.d2logphi = [=](Index, double) { return -beta; };
  ft.prior_mean = Vector::Zero(dim);
  ft.prior_prec = Matrix::Identity(dim, dim);
  return ft;
}

double rms(const Vector& v) { return std::sqrt(v.squaredNorm() / static_cast<double>(v.size())); }

}  // namespace

TEST(FactorTarget, DecompositionMatchesFullLogJoint) {
  Rng dr(1);
  models::ProbitData d = models::simulate_probit(30, 3, dr);
  FactorTarget ft = models::probit_factors(d);
  TargetModel full = ft.full_target();
  for (int rep = 0; rep < 20; ++rep) {
    Vector x = dr.normal(3);
    double direct = -0.5 * x.squaredNorm() - 1.5 * special::kLog2Pi;
    for (Index i = 0; i < d.n(); ++i) direct += special::log_norm_cdf(d.sign(i) * d.V.row(i).dot(x));
    EXPECT_NEAR(full.log_joint(x), direct, 1e-12 * std::abs(direct));
  }
}

TEST(ProjectMarginals, Examples) {
  Vector m(3);
  m << 0.4, -1.0, 2.0;
  Matrix proj = Matrix::Zero(2, 3);
  proj(0, 0) = 1.0;
  Marginals mg = project_marginals(m, Matrix::Identity(3, 3), proj);
  EXPECT_DOUBLE_EQ(mg.mu[0], 0.4);
  EXPECT_DOUBLE_EQ(mg.s2[0], 1.0);
  EXPECT_FALSE(mg.degenerate[0]);
  EXPECT_EQ(mg.mu[1], 0.0);
  EXPECT_EQ(mg.s2[1], 0.0);
  EXPECT_TRUE(mg.degenerate[1]);
}

TEST(ProjectMarginals, MatchesMonteCarlo) {
  Rng r(2);
  Matrix A = Matrix::Random(5, 5);
  Matrix V = A * A.transpose() + 0.5 * Matrix::Identity(5, 5);
  Vector m = r.normal(5);
  Matrix proj = Matrix::Random(1, 5);
  Marginals mg = project_marginals(m, V, proj);
  Matrix L = Eigen::LLT<Matrix>(V).matrixL();
  const int n = 1000000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double f = proj.row(0).dot(m + L * r.normal(5));
    s += f;
    s2 += f * f;
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  EXPECT_NEAR(mean, mg.mu[0], 4 * std::sqrt(var / n));
  // Var of the sample variance for a normal is 2 sigma^4 / n.
  EXPECT_NEAR(var, mg.s2[0], 4 * std::sqrt(2.0 / n) * mg.s2[0]);
}

TEST(SiteUpdate, ConjugateFactorRecoveredFromThreeDraws) {
  const double alpha = 0.7, beta = 1.9, c = -0.3;
  SiteParams s;
  for (double f : {-1.0, 0.3, 2.2}) site_update(s, f, alpha * f - 0.5 * beta * f * f + c, 0.5, true);
  Vector eta = site_final(s);
  EXPECT_NEAR(eta[0], c, 1e-12);
  EXPECT_NEAR(eta[1], alpha, 1e-12);
  EXPECT_NEAR(eta[2], beta, 1e-12);
}

TEST(SiteUpdate, ProbitRegressandAtZero) {
  SiteParams s;
  site_update(s, 0.0, special::log_norm_cdf(0.0), 1.0);
  EXPECT_NEAR(s.g[0], std::log(0.5), 1e-15);
  EXPECT_EQ(s.g[1], 0.0);
  EXPECT_EQ(s.g[2], 0.0);
}

TEST(SiteUpdate, SingularSystemKeepsPreviousEta) {
  SiteParams s;
  s.eta << 1.0, 2.0, 3.0;
  EXPECT_FALSE(site_update(s, 0.5, 1.0, 1.0));  // rank-one C
  EXPECT_EQ(s.eta, Vector(Eigen::Vector3d(1.0, 2.0, 3.0)));
  EXPECT_EQ(s.invalid, 1);
}

TEST(SiteUpdateGradient, MatchesFiniteDifferencesOfReparameterization) {
  // Site as N(mu, sigma^2) with eta1 = mu/sigma^2, eta2 = 1/sigma^2; s = mu + sigma z.
  auto draw = [](double e1, double e2, double z) {
    const double sig = 1.0 / std::sqrt(e2);
    return e1 / e2 + sig * z;
  };
  Rng r(3);
  for (int rep = 0; rep < 50; ++rep) {
    const double e1 = r.normal(), e2 = 0.5 + 2.0 * r.uniform(), z = r.normal();
    const double mu = e1 / e2, sigma = 1.0 / std::sqrt(e2);
    SiteParams s;
    site_update_gradient(s, mu, sigma, z, 0.0, 0.0, 1.0);
    const double h = 1e-6;
    for (int a = 0; a < 2; ++a) {
      const double fp = a == 0 ? draw(e1 + h, e2, z) : draw(e1, e2 + h, z);
      const double fm = a == 0 ? draw(e1 - h, e2, z) : draw(e1, e2 - h, z);
      const double dT1 = (fp - fm) / (2 * h);
      const double dT2 = (-0.5 * fp * fp + 0.5 * fm * fm) / (2 * h);
      EXPECT_NEAR(s.C(1 + a, 1), dT1, 1e-6 * (1 + std::abs(dT1)));
      EXPECT_NEAR(s.C(1 + a, 2), dT2, 1e-6 * (1 + std::abs(dT2)));
    }
  }
}

TEST(SiteUpdateGradient, Examples) {
  SiteParams s;
  site_update_gradient(s, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0);
  EXPECT_DOUBLE_EQ(s.g[1], 1.0);
  EXPECT_DOUBLE_EQ(s.g[2], 0.0);
  EXPECT_THROW(site_update_gradient(s, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0), ParameterDomainError);

  // Gaussian factor: three gradient updates recover the site exactly.
  const double alpha = -0.4, beta = 0.8, c = 1.1;
  SiteParams g;
  Rng r(4);
  for (int i = 0; i < 3; ++i) {
    const double mu = r.normal(), sigma = 0.5 + r.uniform(), z = r.normal(), f = mu + sigma * z;
    site_update_gradient(g, mu, sigma, z, alpha * f - 0.5 * beta * f * f + c, alpha - beta * f, 0.3, true);
  }
  Vector eta = site_final(g);
  EXPECT_NEAR(eta[0], c, 1e-10);
  EXPECT_NEAR(eta[1], alpha, 1e-10);
  EXPECT_NEAR(eta[2], beta, 1e-10);
}

TEST(AssembleGlobal, DecompositionIdentity) {
  Rng dr(5);
  models::ProbitData d = models::simulate_probit(12, 3, dr);
  FactorTarget ft = models::probit_factors(d);
  std::vector<Vector> etas;
  Matrix P = ft.prior_prec;
  Vector h = ft.prior_prec * ft.prior_mean;
  for (Index j = 0; j < ft.n_factors(); ++j) {
    etas.push_back(dr.normal(3));
    P += etas.back()[2] * ft.proj.row(j).transpose() * ft.proj.row(j);
    h += etas.back()[1] * ft.proj.row(j).transpose();
  }
  GlobalNatural g = assemble_global(ft, etas);
  EXPECT_LT((g.P - P).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((g.h - h).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Subsample, FullSampleIsExact) {
  Rng dr(6);
  models::ProbitData d = models::simulate_probit(8, 2, dr);
  FactorTarget ft = models::probit_factors(d);
  TargetModel full = ft.full_target();
  TargetModel sub = subsample_logp(ft, 8).resample(dr);
  Vector x = dr.normal(2);
  EXPECT_NEAR(sub.log_joint(x), full.log_joint(x), 1e-12);
  EXPECT_THROW(subsample_logp(ft, 0), ConfigError);
  EXPECT_THROW(subsample_logp(ft, 9), ConfigError);
}

TEST(Invariants, SubsamplingUnbiasedBySubsetEnumeration) {
  Rng dr(7);
  for (Index n : {3, 5, 6}) {
    models::ProbitData d = models::simulate_probit(n, 2, dr);
    FactorTarget ft = models::probit_factors(d);
    const double full = ft.full_target().log_joint(Vector::Constant(2, 0.3));
    for (Index K = 1; K <= n; ++K) {
      // Enumerate all K-subsets via bitmasks.
      double total = 0;
      long count = 0;
      for (unsigned mask = 0; mask < (1u << n); ++mask) {
        if (static_cast<Index>(std::popcount(mask)) != K) continue;
        std::vector<Index> idx;
        for (Index j = 0; j < n; ++j)
          if (mask & (1u << j)) idx.push_back(j);
        total += ft.subset_target(idx, static_cast<double>(n) / K).log_joint(Vector::Constant(2, 0.3));
        ++count;
      }
      EXPECT_NEAR(total / count, full, 1e-12 * std::abs(full)) << n << " " << K;
    }
  }
}

TEST(Subsample, SurrogateIsOneOfTheSubsets) {
  Rng dr(8);
  models::ProbitData d = models::simulate_probit(3, 1, dr);
  FactorTarget ft = models::probit_factors(d);
  Vector x = Vector::Constant(1, 0.7);
  std::vector<double> values;
  for (Index j = 0; j < 3; ++j) values.push_back(ft.subset_target({j}, 3.0).log_joint(x));
  auto sub = subsample_logp(ft, 1);
  for (int rep = 0; rep < 20; ++rep) {
    const double v = sub.resample(dr).log_joint(x);
    double best = 1e300;
    for (double u : values) best = std::min(best, std::abs(u - v));
    EXPECT_LT(best, 1e-12);
  }
}

TEST(MinibatchSchedule, EachEpochCoversAllFactorsOnce) {
  MinibatchSchedule sched(23, 5);
  Rng r(9);
  for (int epoch = 0; epoch < 3; ++epoch) {
    std::vector<int> seen(23, 0);
    for (int b = 0; b < 5; ++b)
      for (Index j : sched.next(r)) ++seen[j];
    for (int c : seen) EXPECT_EQ(c, 1);
  }
}

TEST(RunFactorized, SingleConjugateFactorIsExact) {
  FactorTarget ft = conjugate_single(0.9, 2.0, 0.1, 2);
  Matrix P = ft.prior_prec + 2.0 * ft.proj.row(0).transpose() * ft.proj.row(0);
  Vector h = 0.9 * ft.proj.row(0).transpose();
  Matrix V = P.inverse();
  for (auto mode : {SiteMode::basic, SiteMode::gradient}) {
    FactorizedOptions opt;
    opt.mode = mode;
    FactorizedFit fit = run_factorized(ft, 8, 10, opt);
    EXPECT_LT((fit.m - V * h).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((fit.V - V).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(RunFactorized, ProbitSitesMatchJointGaussianFit) {
  Rng dr(11);
  models::ProbitData d = models::simulate_probit(100, 5, dr);
  auto exact = models::probit_exact_gaussian_vb(d);
  FactorTarget ft = models::probit_factors(d);
  for (auto mode : {SiteMode::basic, SiteMode::gradient}) {
    FactorizedOptions opt;
    opt.mode = mode;
    FactorizedFit fit = run_factorized(ft, 4000, 12, opt);
    EXPECT_LT(models::rmse(fit.m, exact.m), 0.02 * rms(exact.m)) << (mode == SiteMode::basic ? "basic" : "gradient");
    EXPECT_NEAR(fit.likelihood_evals, 4000.0, 1e-9);
  }
}

TEST(RunFactorized, DirectSiteSamplingAgrees) {
  Rng dr(13);
  models::ProbitData d = models::simulate_probit(100, 5, dr);
  FactorTarget ft = models::probit_factors(d);
  FactorizedOptions a, b;
  b.sample_sites_directly = true;
  FactorizedFit fa = run_factorized(ft, 4000, 14, a);
  FactorizedFit fb = run_factorized(ft, 4000, 15, b);
  EXPECT_LT(models::rmse(fa.m, fb.m), 0.02 * rms(fa.m));
}

TEST(RunFactorized, MinibatchesAndBudget) {
  Rng dr(16);
  models::ProbitData d = models::simulate_probit(100, 3, dr);
  FactorTarget ft = models::probit_factors(d);
  FactorizedOptions opt;
  opt.minibatches = 10;
  FactorizedFit fit = run_factorized(ft, 200, 17, opt);
  EXPECT_NEAR(fit.likelihood_evals, 20.0, 1e-9);
  opt.minibatches = 0;
  opt.eval_budget = 50;
  FactorizedFit b = run_factorized(ft, 200, 17, opt);
  EXPECT_NEAR(b.likelihood_evals, 50.0, 1e-9);
  FactorTarget no_grad = ft;
  no_grad.dlogphi = nullptr;
  opt.mode = SiteMode::gradient;
  EXPECT_THROW(run_factorized(no_grad, 10, 1, opt), UnsupportedOperation);
}

TEST(Invariants, ZeroPartialCorrelationAtSiteFixedPoint) {
  // Sites at the fixed point: regression of log phi_i on (1, f, -f^2/2)
  // under the exact marginal. Residuals must be uncorrelated with the
  // global statistics x_a and -x_a x_b / 2 under q.
  Rng dr(18);
  models::ProbitData d = models::simulate_probit(40, 2, dr);
  auto exact = models::probit_exact_gaussian_vb(d);
  FactorTarget ft = models::probit_factors(d);
  Marginals mg = project_marginals(exact.m, exact.V, ft.proj);
  std::vector<Vector> sites;
  for (Index i = 0; i < ft.n_factors(); ++i) {
    const double mu = mg.mu[i], s2 = mg.s2[i];
    Matrix C = Matrix::Zero(3, 3);
    Vector g = Vector::Zero(3);
    auto rule = quad::gauss_hermite(60);
    for (std::size_t q = 0; q < rule.x.size(); ++q) {
      const double f = mu + std::sqrt(s2) * rule.x[q];
      Vector t = site_stats(f);
      C += rule.w[q] * t * t.transpose();
      g += rule.w[q] * t * ft.logphi(i, f);
    }
    sites.push_back(C.ldlt().solve(g));
  }
  // The assembled global fit reproduces q.
  GlobalNatural gn = assemble_global(ft, sites);
  EXPECT_LT((gn.P - linalg::spd_inverse(exact.V)).cwiseAbs().maxCoeff(), 1e-7);

  Rng r(19);
  Matrix L = Eigen::LLT<Matrix>(exact.V).matrixL();
  const int n = 100000;
  for (Index i : {0, 7, 23}) {
    std::vector<double> res(n);
    std::vector<Vector> stats(n);
    for (int k = 0; k < n; ++k) {
      Vector x = exact.m + L * r.normal(2);
      const double f = ft.proj.row(i).dot(x);
      res[k] = ft.logphi(i, f) - site_stats(f).dot(sites[i]);
      Vector t(5);
      t << x[0], x[1], -0.5 * x[0] * x[0], -0.5 * x[1] * x[1], -x[0] * x[1];
      stats[k] = t;
    }
    for (int a = 0; a < 5; ++a) {
      double mr = 0, mt = 0;
      for (int k = 0; k < n; ++k) {
        mr += res[k] / n;
        mt += stats[k][a] / n;
      }
      double cov = 0, v = 0;
      for (int k = 0; k < n; ++k) {
        const double p = (res[k] - mr) * (stats[k][a] - mt);
        cov += p / n;
        v += p * p / n;
      }
      const double se = std::sqrt((v - cov * cov) / n);
      EXPECT_LT(std::abs(cov), 4 * se) << "factor " << i << " statistic " << a;
    }
  }
}
