#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <random>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "lrvb/core/rng.hpp"
#include "lrvb/core/special.hpp"
#include "lrvb/models/target.hpp"

namespace lrvb::models {

/// Count pairs (n_j, y_j) with y_j ~ Beta-Binomial(n_j, K m, K (1 - m)).
struct BetaBinData {
  std::vector<double> n, y;

  std::size_t size() const { return n.size(); }
  void validate() const {
    if (n.size() != y.size() || n.empty()) throw DataError("betabin: need matching, non-empty n and y");
    for (std::size_t j = 0; j < n.size(); ++j) {
      if (!(y[j] >= 0.0) || !(y[j] <= n[j]) || y[j] != std::floor(y[j]) || n[j] != std::floor(n[j]))
        throw DataError("betabin: need integers 0 <= y_j <= n_j");
    }
  }
};

/// J groups with sizes uniform on [n_lo, n_hi] and rates from Beta(K m, K (1 - m)).
inline BetaBinData simulate_betabin(std::size_t J, double m, double K, int n_lo, int n_hi, Rng& rng) {
  BetaBinData d;
  std::gamma_distribution<double> ga(K * m, 1.0), gb(K * (1.0 - m), 1.0);
  for (std::size_t j = 0; j < J; ++j) {
    const int nj = n_lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(n_hi - n_lo + 1)));
    const double a = ga(rng.engine()), b = gb(rng.engine());
    std::binomial_distribution<int> bin(nj, a / (a + b));
    d.n.push_back(nj);
    d.y.push_back(bin(rng.engine()));
  }
  return d;
}

namespace detail {
inline double lchoose(double n, double k) { return std::lgamma(n + 1) - std::lgamma(k + 1) - std::lgamma(n - k + 1); }

// Differences f(a + d) - f(a) for lgamma, digamma and trigamma. Direct
// differences cancel once a is large (K reaches e^40 on the grid), so past
// kStirling the asymptotic series are differenced term by term.
inline constexpr double kStirling = 20.0;

inline double lgamma_delta(double a, double d) {
  if (d == 0.0) return 0.0;
  if (a < kStirling) return std::lgamma(a + d) - std::lgamma(a);
  auto omega = [](double x) {
    const double r = 1.0 / (x * x);
    return (1.0 / 12.0 - r * (1.0 / 360.0 - r * (1.0 / 1260.0 - r / 1680.0))) / x;
  };
  return (a - 0.5) * std::log1p(d / a) + d * std::log(a + d) - d + omega(a + d) - omega(a);
}

inline double digamma_delta(double a, double d) {
  if (d == 0.0) return 0.0;
  if (a < kStirling) return boost::math::digamma(a + d) - boost::math::digamma(a);
  const double x = a + d;
  auto tail = [](double y) {
    const double r = 1.0 / (y * y);
    return r * (1.0 / 12.0 - r * (1.0 / 120.0 - r * (1.0 / 252.0 - r / 240.0)));
  };
  return std::log1p(d / a) + 0.5 * d / (a * x) - (tail(x) - tail(a));
}

inline double trigamma_delta(double a, double d) {
  if (d == 0.0) return 0.0;
  if (a < kStirling) return boost::math::trigamma(a + d) - boost::math::trigamma(a);
  const double x = a + d;
  auto tail = [](double y) {
    const double r = 1.0 / (y * y);
    return r * (0.5 + (1.0 / 6.0 - r * (1.0 / 30.0 - r * (1.0 / 42.0 - r / 30.0))) / y);
  };
  return -d / (a * x) + (tail(x) - tail(a));
}
}  // namespace detail

/// Posterior in x = (logit m, log K) under p(m, K) proportional to
/// m^{-1} (1-m)^{-1} (1+K)^{-2}, including the change-of-variables Jacobian
/// m (1-m) K and the binomial coefficients.
inline TargetModel betabin_model(const BetaBinData& data) {
  data.validate();
  double cst = 0.0;
  for (std::size_t j = 0; j < data.size(); ++j) cst += detail::lchoose(data.n[j], data.y[j]);
  auto logp = [data, cst](const Vector& x) {
    const double m = 1.0 / (1.0 + std::exp(-x[0])), K = std::exp(x[1]);
    const double a = K * m, b = K * (1.0 - m);
    double s = cst + x[1] - 2.0 * std::log1p(K);
    for (std::size_t j = 0; j < data.size(); ++j)
      s += detail::lgamma_delta(a, data.y[j]) + detail::lgamma_delta(b, data.n[j] - data.y[j]) -
           detail::lgamma_delta(a + b, data.n[j]);
    return s;
  };
  // Derivatives of the likelihood in (a, b), then the chain rule to x.
  auto parts = [data](const Vector& x, Vector& g_ab, Matrix& h_ab) {
    const double m = 1.0 / (1.0 + std::exp(-x[0])), K = std::exp(x[1]);
    const double a = K * m, b = K * (1.0 - m);
    g_ab = Vector::Zero(2);
    h_ab = Matrix::Zero(2, 2);
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double n = data.n[j], y = data.y[j];
      const double dn = detail::digamma_delta(a + b, n), tn = detail::trigamma_delta(a + b, n);
      g_ab[0] += detail::digamma_delta(a, y) - dn;
      g_ab[1] += detail::digamma_delta(b, n - y) - dn;
      h_ab(0, 0) += detail::trigamma_delta(a, y) - tn;
      h_ab(1, 1) += detail::trigamma_delta(b, n - y) - tn;
      h_ab(0, 1) -= tn;
    }
    h_ab(1, 0) = h_ab(0, 1);
    return std::pair{m, K};
  };
  TargetModel t;
  t.dim = 2;
  t.log_joint = logp;
  t.grad = [parts](const Vector& x) {
    Vector gab;
    Matrix hab;
    auto [m, K] = parts(x, gab, hab);
    const double km = K * m * (1.0 - m);
    Vector g(2);
    g[0] = km * (gab[0] - gab[1]);
    g[1] = K * m * gab[0] + K * (1.0 - m) * gab[1] + 1.0 - 2.0 * K / (1.0 + K);
    return g;
  };
  t.hess = [parts](const Vector& x) {
    Vector gab;
    Matrix hab;
    auto [m, K] = parts(x, gab, hab);
    const double km = K * m * (1.0 - m);
    const double a = K * m, b = K * (1.0 - m);
    Matrix J(2, 2);
    J << km, a, -km, b;
    Matrix H = J.transpose() * hab * J;
    // Second derivatives of a = K m and b = K (1 - m).
    H(0, 0) += (gab[0] - gab[1]) * km * (1.0 - 2.0 * m);
    H(0, 1) += (gab[0] - gab[1]) * km;
    H(1, 0) = H(0, 1);
    H(1, 1) += gab[0] * a + gab[1] * b - 2.0 * K / ((1.0 + K) * (1.0 + K));
    return H;
  };
  return t;
}

/// Tensor-grid trapezoid over a box in (logit m, log K).
struct GridSpec {
  double lo0 = 0, hi0 = 0, lo1 = 0, hi1 = 0;
  int n0 = 400, n1 = 400;
};

struct Quadrature {
  GridSpec grid;
  double log_Z = 0.0;
  std::vector<double> logp;  // row-major, n0 x n1
  double h0 = 0, h1 = 0;

  Vector point(int i, int j) const {
    Vector x(2);
    x << grid.lo0 + i * h0, grid.lo1 + j * h1;
    return x;
  }
  /// KL(q || p) for a normalized log-density evaluator q.
  double kl(const std::function<double(const Vector&)>& logq) const {
    double s = 0.0;
    for (int i = 0; i < grid.n0; ++i)
      for (int j = 0; j < grid.n1; ++j) {
        const double lq = logq(point(i, j));
        if (!std::isfinite(lq)) continue;
        const double q = std::exp(lq);
        if (q == 0.0) continue;
        s += q * (lq - (logp[static_cast<std::size_t>(i) * grid.n1 + j] - log_Z));
      }
    return s * h0 * h1;
  }
  /// Posterior moments from the grid.
  std::pair<Vector, Matrix> moments() const {
    Vector m = Vector::Zero(2);
    Matrix S = Matrix::Zero(2, 2);
    double tot = 0.0;
    for (int i = 0; i < grid.n0; ++i)
      for (int j = 0; j < grid.n1; ++j) {
        const double w = std::exp(logp[static_cast<std::size_t>(i) * grid.n1 + j] - log_Z) * h0 * h1;
        Vector x = point(i, j);
        m += w * x;
        S += w * x * x.transpose();
        tot += w;
      }
    m /= tot;
    S = S / tot - m * m.transpose();
    return {m, S};
  }
};

/// Grid must carry the posterior to within 1e-8 at its edges: the largest
/// boundary density relative to the peak must fall below edge_tol.
inline Quadrature betabin_quadrature(const TargetModel& t, const GridSpec& g, double edge_tol = 1e-12) {
  Quadrature q;
  q.grid = g;
  q.h0 = (g.hi0 - g.lo0) / (g.n0 - 1);
  q.h1 = (g.hi1 - g.lo1) / (g.n1 - 1);
  q.logp.resize(static_cast<std::size_t>(g.n0) * g.n1);
  double mx = -INFINITY, edge = -INFINITY;
  for (int i = 0; i < g.n0; ++i)
    for (int j = 0; j < g.n1; ++j) {
      const double v = t.log_joint(q.point(i, j));
      q.logp[static_cast<std::size_t>(i) * g.n1 + j] = v;
      mx = std::max(mx, v);
      if (i == 0 || j == 0 || i == g.n0 - 1 || j == g.n1 - 1) edge = std::max(edge, v);
    }
  if (edge - mx > std::log(edge_tol)) {
    const double w0 = g.hi0 - g.lo0, w1 = g.hi1 - g.lo1;
    throw ConfigError("betabin quadrature: posterior mass reaches the grid boundary; try [" +
                      std::to_string(g.lo0 - 0.5 * w0) + ", " + std::to_string(g.hi0 + 0.5 * w0) + "] x [" +
                      std::to_string(g.lo1 - 0.5 * w1) + ", " + std::to_string(g.hi1 + 0.5 * w1) + "]");
  }
  double s = 0.0;
  for (double v : q.logp) s += std::exp(v - mx);
  q.log_Z = mx + std::log(s * q.h0 * q.h1);
  return q;
}

/// Grows a box around the mode until the boundary test passes.
inline Quadrature betabin_quadrature_auto(const TargetModel& t, const Vector& center, int n = 400) {
  GridSpec g{center[0] - 3.0, center[0] + 3.0, center[1] - 5.0, center[1] + 5.0, n, n};
  for (int attempt = 0; attempt < 8; ++attempt) {
    try {
      return betabin_quadrature(t, g);
    } catch (const ConfigError&) {
      const double w0 = g.hi0 - g.lo0, w1 = g.hi1 - g.lo1;
      g.lo0 -= 0.5 * w0;
      g.hi0 += 0.5 * w0;
      g.lo1 -= 0.5 * w1;
      g.hi1 += 0.5 * w1;
    }
  }
  return betabin_quadrature(t, g);
}

/// Newton ascent to the posterior mode from a moment-based start.
inline Vector betabin_mode(const TargetModel& t, const BetaBinData& d) {
  double sy = 0.0, sn = 0.0;
  for (std::size_t j = 0; j < d.size(); ++j) {
    sy += d.y[j];
    sn += d.n[j];
  }
  const double pbar = std::clamp((sy + 0.5) / (sn + 1.0), 1e-6, 1.0 - 1e-6);
  Vector x(2);
  x << std::log(pbar / (1.0 - pbar)), std::log(100.0);
  for (int it = 0; it < 200; ++it) {
    Vector g = t.grad(x);
    Matrix H = t.hess(x);
    Eigen::LLT<Matrix> llt(-H);
    Vector step = llt.info() == Eigen::Success ? Vector(llt.solve(g)) : Vector(0.1 * g);
    double scale = 1.0;
    const double f0 = t.log_joint(x);
    while (scale > 1e-8 && !(t.log_joint(x + scale * step) >= f0)) scale *= 0.5;
    x += scale * step;
    if ((scale * step).norm() < 1e-10) break;
  }
  return x;
}

}  // namespace lrvb::models
