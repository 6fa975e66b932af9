#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "lrvb/core/quadrature.hpp"
#include "lrvb/expfam/beta.hpp"
#include "lrvb/expfam/categorical.hpp"
#include "lrvb/expfam/exponential.hpp"
#include "lrvb/expfam/gaussian.hpp"
#include "lrvb/expfam/inverse_gamma.hpp"

using namespace lrvb;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

// Integral of g(x) q(x) over the support of a 1-D family.
template <class G>
double expect_1d(const Family& f, const Vector& eta, G g) {
  auto dens = [&](double x) {
    Vector p = Vector::Constant(1, x);
    return g(x) * std::exp(log_density(f, eta, p));
  };
  const std::string n = f.name();
  if (n == "exponential") return quad::integrate_to_inf(dens, 0.0);
  if (n == "beta") return quad::integrate(dens, 0.0, 1.0);
  if (n == "inverse_gamma") return quad::integrate_to_inf(dens, 0.0);
  // Gaussian: finite window of +-40 sd.
  GaussianFamily gf(1);
  auto mo = gf.moments(eta);
  const double sd = 1.0 / std::sqrt(mo.P(0, 0));
  return quad::integrate(dens, mo.m[0] - 40 * sd, mo.m[0] + 40 * sd);
}

Vector random_eta(const std::string& name, Rng& r) {
  if (name == "exponential") return vec({0.2 + 4.8 * r.uniform()});
  if (name == "gaussian") {
    const double m = -3 + 6 * r.uniform(), V = 0.1 + 4.9 * r.uniform();
    return vec({m / V, 1.0 / V});
  }
  if (name == "beta") return vec({0.5 + 29.5 * r.uniform(), 0.5 + 29.5 * r.uniform()});
  return vec({1.5 + 18.5 * r.uniform(), 0.1 + 4.9 * r.uniform()});
}

std::vector<std::shared_ptr<Family>> one_d_families() {
  return {std::make_shared<ExponentialFamily>(), std::make_shared<GaussianFamily>(1), std::make_shared<BetaFamily>(),
          std::make_shared<InverseGammaFamily>()};
}

}  // namespace

TEST(LogDensity, Examples) {
  ExponentialFamily e;
  EXPECT_NEAR(log_density(e, vec({2.0}), vec({0.0})), std::log(2.0), 1e-15);
  EXPECT_NEAR(log_density(e, vec({2.0}), vec({1.0})), std::log(2.0) - 2.0, 1e-15);
  GaussianFamily g(1);
  EXPECT_NEAR(log_density(g, vec({0.0, 1.0}), vec({0.0})), -0.5 * std::log(2 * M_PI), 1e-15);
  // Unnormalized form uses eta0 instead of -U.
  AugmentedParams p{0.25, vec({2.0})};
  EXPECT_NEAR(log_density(e, p, vec({1.0}), false), 0.25 - 2.0, 1e-15);
}

TEST(LogDensity, InvalidParametersThrow) {
  ExponentialFamily e;
  EXPECT_THROW(log_density(e, vec({-1.0}), vec({1.0})), ParameterDomainError);
  GaussianFamily g(2);
  EXPECT_THROW(log_normalizer(g, vec({0, 0, 1, -1, 0})), ParameterDomainError);
  BetaFamily b;
  EXPECT_THROW(log_normalizer(b, vec({0.0, 1.0})), ParameterDomainError);
}

TEST(LogNormalizer, ClosedForms) {
  ExponentialFamily e;
  EXPECT_NEAR(log_normalizer(e, vec({2.0})), -std::log(2.0), 1e-15);
  GaussianFamily g(1);
  EXPECT_NEAR(log_normalizer(g, vec({0.0, 1.0})), 0.5 * std::log(2 * M_PI), 1e-15);
}

TEST(LogNormalizer, BetaTwentyOneAndAHalfByQuadrature) {
  BetaFamily b;
  const double q = quad::integrate([](double x) { return std::pow(x, 19.0) * std::sqrt(1.0 - x); }, 0.0, 1.0);
  EXPECT_NEAR(log_normalizer(b, vec({20.0, 1.5})), std::log(q), 1e-10);
}

TEST(Invariants, NormalizationByQuadrature) {
  Rng r(11);
  for (auto& f : one_d_families())
    for (int i = 0; i < 50; ++i) {
      Vector eta = random_eta(f->name(), r);
      EXPECT_NEAR(expect_1d(*f, eta, [](double) { return 1.0; }), 1.0, 1e-6) << f->name() << " " << eta.transpose();
    }
}

TEST(Invariants, SamplerMomentsMatchQuadrature) {
  std::vector<std::pair<std::shared_ptr<Family>, Vector>> cases = {
      {std::make_shared<ExponentialFamily>(), vec({2.0})},
      {std::make_shared<GaussianFamily>(1), vec({0.5, 0.5})},
      {std::make_shared<BetaFamily>(), vec({2.0, 5.0})},
      {std::make_shared<BetaFamily>(), vec({20.0, 1.5})},
      {std::make_shared<InverseGammaFamily>(), vec({6.0, 2.0})}};
  Rng r(3);
  for (auto& [f, eta] : cases) {
    const int n = 100000;
    double s1 = 0, s2 = 0, s3 = 0, s4 = 0;
    for (int i = 0; i < n; ++i) {
      const double x = f->sample(eta, r).x[0];
      s1 += x;
      s2 += x * x;
      s3 += x * x * x;
      s4 += x * x * x * x;
    }
    const double m1 = s1 / n, m2 = s2 / n;
    const double se1 = std::sqrt((m2 - m1 * m1) / n), se2 = std::sqrt((s4 / n - m2 * m2) / n);
    EXPECT_NEAR(m1, expect_1d(*f, eta, [](double x) { return x; }), 4 * se1) << f->name();
    EXPECT_NEAR(m2, expect_1d(*f, eta, [](double x) { return x * x; }), 4 * se2) << f->name();
    (void)s3;
  }
}

TEST(Sampler, ExponentialMeanOfManyDraws) {
  ExponentialFamily e;
  Rng r(99);
  const int n = 100000;
  double s = 0;
  for (int i = 0; i < n; ++i) s += e.sample(vec({2.0}), r).x[0];
  // sd of the mean is 0.5/sqrt(n)
  EXPECT_NEAR(s / n, 0.5, 3 * 0.5 / std::sqrt(double(n)));
}

TEST(Sampler, GaussianLocationScale) {
  GaussianFamily g(1);
  const double m = 1.5, V = 4.0;
  Vector z = vec({0.7});
  EXPECT_NEAR(g.transform(g.natural(vec({m}), Matrix::Constant(1, 1, 1 / V)), z)[0], m + 2.0 * 0.7, 1e-14);
}

TEST(Jacobian, Examples) {
  ExponentialFamily e;
  // u chosen so that x* = 0.5 at eta = 2.
  Vector z = vec({1.0 - std::exp(-1.0)});
  EXPECT_NEAR(e.transform(vec({2.0}), z)[0], 0.5, 1e-15);
  EXPECT_NEAR(e.reparam_jacobian(vec({2.0}), z)(0, 0), -0.25, 1e-15);
  Vector mv = gaussian_mv_jacobian(4.0, 0.6);
  EXPECT_EQ(mv[0], 1.0);
  EXPECT_NEAR(mv[1], 0.6 / 4.0, 1e-15);
  CategoricalFamily c(3);
  EXPECT_THROW(c.reparam_jacobian(vec({0, 0}), vec({0.3})), UnsupportedOperation);
}

TEST(Jacobian, MatchesFiniteDifferences) {
  std::vector<std::shared_ptr<Family>> fams = {std::make_shared<ExponentialFamily>(), std::make_shared<GaussianFamily>(1),
                                               std::make_shared<BetaFamily>(), std::make_shared<InverseGammaFamily>(),
                                               std::make_shared<GaussianFamily>(3)};
  Rng r(5);
  for (auto& f : fams)
    for (int rep = 0; rep < 100; ++rep) {
      Vector eta;
      if (f->name() == "gaussian" && f->dim() == 3) {
        Matrix A = Matrix::Random(3, 3);
        Matrix P = A * A.transpose() + 0.5 * Matrix::Identity(3, 3);
        eta = static_cast<const GaussianFamily&>(*f).natural(r.normal(3), P);
      } else {
        eta = random_eta(f->name(), r);
      }
      Vector z = f->draw_noise(r);
      if (f->name() == "beta" || f->name() == "inverse_gamma") z[0] = 0.02 + 0.96 * z[0];
      Matrix J = f->reparam_jacobian(eta, z);
      for (Index i = 0; i < f->k(); ++i) {
        const double h = 1e-6 * std::max(1.0, std::abs(eta[i]));
        Vector ep = eta, em = eta;
        ep[i] += h;
        em[i] -= h;
        Vector fd = (f->transform(ep, z) - f->transform(em, z)) / (2 * h);
        for (Index d = 0; d < f->dim(); ++d)
          EXPECT_NEAR(J(i, d), fd[d], 1e-4 * std::max(1.0, std::abs(fd[d]))) << f->name() << " eta=" << eta.transpose();
      }
    }
}

TEST(Jacobian, SufficientStatisticGradientMatchesFiniteDifferences) {
  std::vector<std::pair<std::shared_ptr<Family>, Vector>> cases = {
      {std::make_shared<ExponentialFamily>(), vec({0.7})}, {std::make_shared<GaussianFamily>(3), vec({0.3, -1.2, 0.8})},
      {std::make_shared<BetaFamily>(), vec({0.3})},        {std::make_shared<InverseGammaFamily>(), vec({1.7})}};
  for (auto& [f, x] : cases) {
    Matrix G = f->suff_stats_grad(x);
    Vector lb = f->log_base_grad(x);
    for (Index d = 0; d < f->dim(); ++d) {
      const double h = 1e-6;
      Vector xp = x, xm = x;
      xp[d] += h;
      xm[d] -= h;
      Vector fd = (f->suff_stats(xp) - f->suff_stats(xm)) / (2 * h);
      for (Index j = 0; j < f->k(); ++j) EXPECT_NEAR(G(d, j), fd[j], 1e-6) << f->name();
      EXPECT_NEAR(lb[d], (f->log_base(xp) - f->log_base(xm)) / (2 * h), 1e-6) << f->name();
    }
  }
}

TEST(Fisher, GaussianStandardNormal) {
  GaussianFamily g(1);
  Matrix F = g.analytic_fisher(vec({0.0, 1.0}));
  Matrix ref(3, 3);
  ref << 1, 0, -0.5, 0, 1, 0, -0.5, 0, 0.75;
  EXPECT_LT((F - ref).cwiseAbs().maxCoeff(), 1e-14);
  // Gauss-Hermite oracle at a non-trivial point.
  const double m = 0.8, V = 2.5;
  Matrix G = g.analytic_fisher(vec({m / V, 1 / V}));
  auto t = [](double x) { return Vector(vec({1.0, x, -0.5 * x * x})); };
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      EXPECT_NEAR(G(a, b), quad::normal_expect([&](double x) { return t(x)[a] * t(x)[b]; }, m, V, 30), 1e-10);
}

TEST(Fisher, ExponentialSecondMomentIsTwoOverRateSquared) {
  ExponentialFamily e;
  for (double r : {0.5, 1.0, 2.0, 3.7}) {
    Matrix F = e.analytic_fisher(vec({r}));
    EXPECT_NEAR(F(1, 1), expect_1d(e, vec({r}), [](double x) { return x * x; }), 1e-9);
    EXPECT_NEAR(F(0, 1), expect_1d(e, vec({r}), [](double x) { return -x; }), 1e-9);
    // The alternative (2,2) entry 1/r^2 would make the matrix singular.
    Matrix alt = F;
    alt(1, 1) = 1.0 / (r * r);
    EXPECT_NEAR(alt.determinant(), 0.0, 1e-12);
    EXPECT_GT(F.determinant(), 0.0);
  }
}

TEST(Invariants, FisherMatchesMonteCarlo) {
  Matrix P(2, 2);
  P << 2.0, -0.6, -0.6, 1.0;
  GaussianFamily g2(2);
  std::vector<std::pair<std::shared_ptr<Family>, Vector>> cases = {
      {std::make_shared<ExponentialFamily>(), vec({1.5})},
      {std::make_shared<GaussianFamily>(1), vec({0.4, 2.0})},
      {std::make_shared<GaussianFamily>(2), g2.natural(vec({0.3, -0.5}), P)},
      {std::make_shared<BetaFamily>(), vec({3.0, 4.5})},
      {std::make_shared<InverseGammaFamily>(), vec({7.0, 3.0})},
      {std::make_shared<CategoricalFamily>(4), vec({0.3, -0.2, 1.0})}};
  Rng r(21);
  for (auto& [f, eta] : cases) {
    const int n = 1000000;
    const Index K = f->k() + 1;
    Matrix s1 = Matrix::Zero(K, K), s2 = Matrix::Zero(K, K);
    for (int i = 0; i < n; ++i) {
      Vector t = f->augmented_stats(f->sample(eta, r).x);
      Matrix o = t * t.transpose();
      s1 += o;
      s2 += o.cwiseProduct(o);
    }
    Matrix mean = s1 / n;
    Matrix se = ((s2 / n - mean.cwiseProduct(mean)) / n).cwiseSqrt();
    Matrix F = f->analytic_fisher(eta);
    EXPECT_TRUE(F.isApprox(F.transpose()));
    EXPECT_TRUE(Eigen::LLT<Matrix>(F).info() == Eigen::Success) << f->name();
    for (Index a = 0; a < K; ++a)
      for (Index b = 0; b < K; ++b) EXPECT_NEAR(mean(a, b), F(a, b), 4 * se(a, b) + 1e-12) << f->name() << " " << a << b;
  }
}

TEST(Categorical, ProbabilitiesAndGauge) {
  CategoricalFamily c(3);
  Vector p = c.probabilities(vec({std::log(2.0), 0.0}));
  EXPECT_NEAR(p[0], 0.5, 1e-15);
  EXPECT_NEAR(p[1], 0.25, 1e-15);
  EXPECT_NEAR(p[2], 0.25, 1e-15);
  EXPECT_NEAR(log_density(c, vec({std::log(2.0), 0.0}), vec({2.0})), std::log(0.25), 1e-15);
}

TEST(Gaussian, NaturalRoundTrip) {
  GaussianFamily g(3);
  Matrix A = Matrix::Random(3, 3);
  Matrix P = A * A.transpose() + Matrix::Identity(3, 3);
  Vector m = vec({1.0, -2.0, 0.5});
  auto mo = g.moments(g.natural(m, P));
  EXPECT_LT((mo.m - m).norm(), 1e-12);
  EXPECT_LT((mo.P - P).norm(), 1e-12);
  EXPECT_EQ(g.k(), 9);
}
