#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <vector>

#include "lrvb/core/quadrature.hpp"
#include "lrvb/core/rng.hpp"
#include "lrvb/ssm.hpp"

using namespace lrvb;
using namespace lrvb::ssm;

namespace {

PseudoObsGaussian random_site(Index T, Rng& rng, bool head = true) {
  PseudoObsGaussian s = PseudoObsGaussian::empty(T);
  for (Index t = 0; t < T; ++t) {
    s.eta6.D[t] = 0.1 + 2.0 * rng.uniform();
    if (head) s.eta6.b[t] = 0.3 * rng.normal();
  }
  if (head) s.eta6.c = s.eta6.b.cwiseProduct(s.eta6.b).cwiseQuotient(s.eta6.D).sum() + 0.2 + rng.uniform();
  s.eta7 = rng.normal(T + 1);
  if (!head) s.eta7[0] = 0.0;
  return s;
}

Ar1 random_ar1(Rng& rng) { return {1.9 * rng.uniform() - 0.95, 0.05 + rng.uniform()}; }

double max_abs(const Vector& a) { return a.cwiseAbs().maxCoeff(); }

}  // namespace

TEST(Smoother, EmptySiteGivesPrior) {
  Ar1 ar{0.8, 0.3};
  SmootherResult r = smooth(ar, PseudoObsGaussian::empty(6));
  EXPECT_FALSE(r.head_proper);
  EXPECT_LT(max_abs(r.mean), 1e-15);
  for (Index t = 1; t <= 6; ++t) EXPECT_NEAR(r.var[t], 0.3 / (1.0 - 0.64), 1e-12);
  EXPECT_NEAR(r.log_normalizer, 0.0, 1e-12);
}

TEST(Smoother, MatchesDenseOracleT4) {
  Rng rng(1);
  Ar1 ar = random_ar1(rng);
  PseudoObsGaussian s = random_site(4, rng);
  SmootherResult a = smooth(ar, s), b = dense_oracle(ar, s);
  EXPECT_LT(max_abs(a.mean - b.mean), 1e-8);
  EXPECT_LT(max_abs(a.var - b.var), 1e-8);
  EXPECT_LT(max_abs(a.cov_head - b.cov_head), 1e-8);
  EXPECT_NEAR(a.log_normalizer, b.log_normalizer, 1e-8);
}

TEST(Smoother, MatchesDenseOracleRandomized) {
  Rng rng(2);
  double worst = 0.0;
  for (int rep = 0; rep < 200; ++rep) {
    const Index T = 2 + static_cast<Index>(rng.below(9));
    Ar1 ar = random_ar1(rng);
    PseudoObsGaussian s = random_site(T, rng, rep % 5 != 0);
    if (rep % 5 == 0) {
      // Head-free sites: compare only the v block and the normalizer without f_0.
      SmootherResult a = smooth(ar, s);
      PseudoObsGaussian s2 = s;
      s2.eta6.c = 1.0;
      SmootherResult b = dense_oracle(ar, s2);
      // f_0 decouples with unit precision and zero shift: log Z gains log sqrt(2 pi).
      worst = std::max(worst, max_abs(a.mean.tail(T) - b.mean.tail(T)));
      worst = std::max(worst, max_abs(a.var.tail(T) - b.var.tail(T)));
      worst = std::max(worst, std::abs(a.log_normalizer + 0.5 * std::log(2.0 * M_PI) - b.log_normalizer));
      continue;
    }
    SmootherResult a = smooth(ar, s), b = dense_oracle(ar, s);
    worst = std::max({worst, max_abs(a.mean - b.mean), max_abs(a.var - b.var), max_abs(a.cov_head - b.cov_head),
                      std::abs(a.log_normalizer - b.log_normalizer)});
  }
  EXPECT_LT(worst, 1e-8);
}

TEST(Smoother, NoDynamicsDecouples) {
  Rng rng(3);
  Ar1 ar{0.0, 0.7};
  PseudoObsGaussian s = random_site(5, rng, false);
  SmootherResult r = smooth(ar, s);
  for (Index t = 0; t < 5; ++t) {
    const double prec = 1.0 / 0.7 + s.eta6.D[t];
    EXPECT_NEAR(r.var[t + 1], 1.0 / prec, 1e-14);
    EXPECT_NEAR(r.mean[t + 1], s.eta7[t + 1] / prec, 1e-14);
  }
}

TEST(Smoother, TimeReversal) {
  Rng rng(4);
  Ar1 ar{0.9, 0.2};
  PseudoObsGaussian s = random_site(7, rng);
  PseudoObsGaussian rev = s;
  rev.eta6.D = s.eta6.D.reverse();
  rev.eta6.b = s.eta6.b.reverse();
  rev.eta7.tail(7) = s.eta7.tail(7).reverse();
  SmootherResult a = smooth(ar, s), b = smooth(ar, rev);
  EXPECT_LT(max_abs(a.var.tail(7) - b.var.tail(7).reverse()), 1e-12);
  EXPECT_LT(max_abs(a.mean.tail(7) - b.mean.tail(7).reverse()), 1e-12);
  EXPECT_NEAR(a.var[0], b.var[0], 1e-12);
  EXPECT_NEAR(a.log_normalizer, b.log_normalizer, 1e-12);
}

TEST(Smoother, LogNormalizerMatchesQuadratureT1) {
  Ar1 ar{0.5, 0.4};
  const double v0 = 0.4 / 0.75;
  // Without the intercept: 1-D integral over v.
  PseudoObsGaussian s = PseudoObsGaussian::empty(1);
  s.eta6.D[0] = 1.3;
  s.eta7[1] = 0.7;
  auto site = [&](double v) { return std::exp(0.7 * v - 0.65 * v * v); };
  const double z1 = quad::normal_expect(site, 0.0, v0, 60);
  EXPECT_NEAR(smooth(ar, s).log_normalizer, std::log(z1), 1e-10);

  // With the intercept: the flat f_0 integral done by Gauss-Hermite on a
  // Gaussian proposal covering the f_0 marginal.
  s.eta6.c = 2.0;
  s.eta6.b[0] = 0.4;
  s.eta7[0] = -0.3;
  SmootherResult r = smooth(ar, s);
  auto rule = quad::gauss_hermite(60);
  const double m0 = r.mean[0], sd0 = std::sqrt(r.var[0]);
  double z2 = 0.0;
  for (std::size_t i = 0; i < rule.x.size(); ++i) {
    const double f0 = m0 + sd0 * rule.x[i];
    // Proposal density N(m0, sd0^2) at f0 divides out.
    const double logprop = -0.5 * rule.x[i] * rule.x[i] - std::log(sd0) - 0.5 * std::log(2.0 * M_PI);
    auto inner = [&](double v) { return std::exp(-0.3 * f0 + 0.7 * v - 0.5 * (2.0 * f0 * f0 + 1.3 * v * v) - 0.4 * f0 * v); };
    z2 += rule.w[i] * quad::normal_expect(inner, 0.0, v0, 60) / std::exp(logprop);
  }
  EXPECT_NEAR(r.log_normalizer, std::log(z2), 1e-9);
}

TEST(Smoother, LogNormalizerMatchesPriorMonteCarlo) {
  Rng rng(5);
  for (Index T = 1; T <= 5; ++T) {
    Ar1 ar = random_ar1(rng);
    PseudoObsGaussian s = random_site(T, rng, false);
    s.eta7 *= 0.3;
    const int n = 200000;
    std::vector<double> vals(n);
    double mean = 0.0;
    const double v0 = ar.sigma2 / (1.0 - ar.phi * ar.phi);
    for (int k = 0; k < n; ++k) {
      Vector v(T);
      v[0] = std::sqrt(v0) * rng.normal();
      for (Index t = 1; t < T; ++t) v[t] = ar.phi * v[t - 1] + std::sqrt(ar.sigma2) * rng.normal();
      const double e = s.eta7.tail(T).dot(v) - 0.5 * v.dot(s.eta6.D.cwiseProduct(v));
      vals[k] = std::exp(e);
      mean += vals[k];
    }
    mean /= n;
    double var = 0.0;
    for (double x : vals) var += (x - mean) * (x - mean);
    const double se = std::sqrt(var / (n - 1) / n);
    EXPECT_LT(std::abs(mean - std::exp(smooth(ar, s).log_normalizer)), 4.0 * se) << "T=" << T;
  }
}

TEST(Smoother, RejectsImproperPrecision) {
  Ar1 ar{0.5, 1.0};
  PseudoObsGaussian s = PseudoObsGaussian::empty(3);
  s.eta6.D << -5.0, 0.0, 0.0;
  EXPECT_THROW(smooth(ar, s), SingularMatrixError);
  PseudoObsGaussian h = PseudoObsGaussian::empty(3);
  h.eta6.c = -1.0;
  h.eta7[0] = 1.0;
  EXPECT_THROW(smooth(ar, h), SingularMatrixError);
  EXPECT_THROW(smooth({1.0, 1.0}, PseudoObsGaussian::empty(3)), ParameterDomainError);
}

TEST(Smoother, LinearRuntime) {
  Rng rng(6);
  std::vector<double> logT, logt;
  for (Index T : {100, 1000, 10000}) {
    Ar1 ar{0.97, 0.02};
    PseudoObsGaussian s = random_site(T, rng);
    const int reps = static_cast<int>(2000000 / T);
    double best = 1e300;
    for (int trial = 0; trial < 5; ++trial) {
      auto t0 = std::chrono::steady_clock::now();
      double sink = 0.0;
      for (int k = 0; k < reps; ++k) sink += smooth(ar, s).log_normalizer;
      auto t1 = std::chrono::steady_clock::now();
      ASSERT_TRUE(std::isfinite(sink));
      best = std::min(best, std::chrono::duration<double>(t1 - t0).count() / reps);
    }
    logT.push_back(std::log(static_cast<double>(T)));
    logt.push_back(std::log(best));
  }
  const double mx = (logT[0] + logT[1] + logT[2]) / 3.0, my = (logt[0] + logt[1] + logt[2]) / 3.0;
  double num = 0.0, den = 0.0;
  for (int i = 0; i < 3; ++i) {
    num += (logT[i] - mx) * (logt[i] - my);
    den += (logT[i] - mx) * (logT[i] - mx);
  }
  const double slope = num / den;
  EXPECT_GE(slope, 0.8);
  EXPECT_LE(slope, 1.2);
}

TEST(SvExpectations, ZeroDataGradientIsMinusHalf) {
  Rng rng(7);
  SmootherResult r = smooth({0.9, 0.1}, random_site(5, rng));
  SvExpectations e = sv_likelihood_expectations(r, Vector::Zero(5));
  for (Index t = 1; t <= 5; ++t) EXPECT_EQ(e.grad[t], -0.5);
  EXPECT_EQ(e.grad[0], -5.0);
}

TEST(SvExpectations, SingleTimeMatchesQuadrature) {
  Ar1 ar{0.6, 0.5};
  PseudoObsGaussian s = PseudoObsGaussian::empty(1);
  s.eta6.c = 3.0;
  s.eta6.b[0] = 0.8;
  s.eta6.D[0] = 0.9;
  s.eta7 << -0.4, 0.3;
  SmootherResult r = smooth(ar, s);
  Vector y = Vector::Constant(1, 0.8);
  SvExpectations e = sv_likelihood_expectations(r, y);

  Matrix S(2, 2);
  S << r.var[0], r.cov_head[0], r.cov_head[0], r.var[1];
  Eigen::LLT<Matrix> llt(S);
  Matrix L = llt.matrixL();
  auto rule = quad::gauss_hermite(40);
  Vector g = Vector::Zero(2), m = Vector::Zero(2);
  Matrix H = Matrix::Zero(2, 2);
  for (std::size_t i = 0; i < rule.x.size(); ++i)
    for (std::size_t j = 0; j < rule.x.size(); ++j) {
      Vector z(2);
      z << rule.x[i], rule.x[j];
      Vector f = r.mean + L * z;
      const double wt = rule.w[i] * rule.w[j];
      const double ye = y[0] * y[0] * std::exp(-f[1] - 2.0 * f[0]);
      g[0] += wt * (-1.0 + ye);
      g[1] += wt * (-0.5 + 0.5 * ye);
      H(0, 0) += wt * (-2.0 * ye);
      H(0, 1) += wt * (-ye);
      H(1, 1) += wt * (-0.5 * ye);
      m += wt * f;
    }
  EXPECT_LT(max_abs(e.grad - g), 1e-6);
  EXPECT_NEAR(e.hess.c, H(0, 0), 1e-6);
  EXPECT_NEAR(e.hess.b[0], H(0, 1), 1e-6);
  EXPECT_NEAR(e.hess.D[0], H(1, 1), 1e-6);
  EXPECT_LT(max_abs(e.mean - m), 1e-6);
}

TEST(SvExpectations, HessianIsArrowhead) {
  Rng rng(8);
  const Index T = 6;
  Vector f = rng.normal(T + 1), y = rng.normal(T);
  // Finite-difference Hessian of log p(y | f) at a point.
  const double h = 1e-4;
  for (Index s = 1; s <= T; ++s)
    for (Index t = 1; t <= T; ++t) {
      if (s == t) continue;
      Vector pp = f, pm = f, mp = f, mm = f;
      pp[s] += h, pp[t] += h;
      pm[s] += h, pm[t] -= h;
      mp[s] -= h, mp[t] += h;
      mm[s] -= h, mm[t] -= h;
      const double d2 = (sv_loglik(pp, y) - sv_loglik(pm, y) - sv_loglik(mp, y) + sv_loglik(mm, y)) / (4 * h * h);
      EXPECT_NEAR(d2, 0.0, 1e-6);
    }
  SvExpectations e = sv_likelihood_expectations(smooth({0.5, 0.5}, random_site(T, rng)), y);
  Matrix D = e.hess.to_dense();
  for (Index s = 1; s <= T; ++s)
    for (Index t = 1; t <= T; ++t)
      if (s != t) EXPECT_EQ(D(s, t), 0.0);
}

// Dense reference: precision = blkdiag(0, Q) + eta6 with the flat intercept.
TEST(PosteriorDraws, DensityMatchesDenseGaussian) {
  Rng rng(30);
  for (int rep = 0; rep < 20; ++rep) {
    const Index T = 2 + static_cast<Index>(rng.below(6));
    Ar1 ar = random_ar1(rng);
    PseudoObsGaussian s = random_site(T, rng);
    Matrix K(T, T);
    const double v0 = ar.sigma2 / (1.0 - ar.phi * ar.phi);
    for (Index i = 0; i < T; ++i)
      for (Index j = 0; j < T; ++j) K(i, j) = v0 * std::pow(ar.phi, static_cast<double>(std::abs(i - j)));
    Matrix Lam = s.eta6.to_dense();
    Lam.bottomRightCorner(T, T) += K.inverse();
    const Vector mu = Lam.ldlt().solve(s.eta7);
    const Vector f = mu + 0.7 * rng.normal(T + 1);
    const Vector r = f - mu;
    const double ref = -0.5 * r.dot(Lam * r) + 0.5 * std::log(Lam.determinant()) -
                       0.5 * static_cast<double>(T + 1) * std::log(2.0 * M_PI);
    EXPECT_NEAR(posterior_log_density(ar, s, f), ref, 1e-9);
  }
}

TEST(PosteriorDraws, MomentsMatchSmoother) {
  Rng rng(31);
  Ar1 ar{0.9, 0.2};
  PseudoObsGaussian s = random_site(6, rng);
  SmootherResult r = smooth(ar, s);
  const int n = 200000;
  Vector m = Vector::Zero(7), q = Vector::Zero(7), c = Vector::Zero(6);
  for (int i = 0; i < n; ++i) {
    Vector f = sample_posterior(ar, s, rng);
    m += f;
    q += f.cwiseProduct(f);
    c += f[0] * f.tail(6);
  }
  m /= n;
  q /= n;
  c /= n;
  for (Index t = 0; t < 7; ++t) {
    const double sd = std::sqrt(r.var[t]);
    EXPECT_NEAR(m[t], r.mean[t], 5.0 * sd / std::sqrt(n));
    EXPECT_NEAR(q[t] - m[t] * m[t], r.var[t], 5.0 * r.var[t] * std::sqrt(2.0 / n));
  }
  for (Index t = 0; t < 6; ++t) {
    const double cov = c[t] - m[0] * m[t + 1];
    EXPECT_NEAR(cov, r.cov_head[t], 5.0 * std::sqrt(r.var[0] * r.var[t + 1] / n) + 1e-12);
  }
}

TEST(PosteriorDraws, Ar1PriorIsNormalized) {
  Ar1 ar{0.6, 0.5};
  // T = 1: stationary N(0, s2 / (1 - phi^2)).
  const double v = 0.5 / (1.0 - 0.36);
  EXPECT_NEAR(ar1_log_prior(ar, Vector::Constant(1, 0.4)), -0.5 * 0.16 / v - 0.5 * std::log(2.0 * M_PI * v), 1e-12);
  // Product of the stationary start and two transitions.
  Vector x(3);
  x << 0.1, -0.3, 0.5;
  const double ref = -0.5 * 0.01 / v - 0.5 * std::log(2.0 * M_PI * v) - 0.5 * std::pow(-0.3 - 0.06, 2) / 0.5 -
                     0.5 * std::log(2.0 * M_PI * 0.5) - 0.5 * std::pow(0.5 + 0.18, 2) / 0.5 - 0.5 * std::log(2.0 * M_PI * 0.5);
  EXPECT_NEAR(ar1_log_prior(ar, x), ref, 1e-12);
}
