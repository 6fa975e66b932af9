#pragma once

#include <cmath>
#include <vector>

#include "lrvb/core/linalg.hpp"
#include "lrvb/core/special.hpp"
#include "lrvb/expfam/family.hpp"

namespace lrvb {

/// Multivariate Gaussian in natural form.
///
/// T(x) = (x_1..x_d, -x_i^2/2 for each i, -x_i x_j for i < j) and
/// eta = (P m, P_ii, P_ij) with P the precision, so k = d + d(d+1)/2.
/// Off-diagonal pairs are ordered (0,1), (0,2), ..., (1,2), ...
class GaussianFamily final : public Family {
 public:
  explicit GaussianFamily(Index d = 1) : d_(d) {
    for (Index i = 0; i < d_; ++i)
      for (Index j = i + 1; j < d_; ++j) pairs_.push_back({i, j});
  }

  std::string name() const override { return "gaussian"; }
  Index k() const override { return d_ + d_ * (d_ + 1) / 2; }
  Index dim() const override { return d_; }

  struct Moments {
    Vector m;
    Matrix P;
  };

  Vector natural(const Vector& m, const Matrix& P) const {
    Vector eta(k());
    eta.head(d_) = P * m;
    eta.segment(d_, d_) = P.diagonal();
    for (std::size_t p = 0; p < pairs_.size(); ++p) eta[2 * d_ + p] = P(pairs_[p].first, pairs_[p].second);
    return eta;
  }
  Vector natural_from_cov(const Vector& m, const Matrix& V) const { return natural(m, linalg::spd_inverse(V)); }

  Matrix precision(const Vector& eta) const {
    Matrix P(d_, d_);
    for (Index i = 0; i < d_; ++i) P(i, i) = eta[d_ + i];
    for (std::size_t p = 0; p < pairs_.size(); ++p) {
      auto [i, j] = pairs_[p];
      P(i, j) = P(j, i) = eta[2 * d_ + p];
    }
    return P;
  }

  Moments moments(const Vector& eta) const {
    Matrix P = precision(eta);
    Eigen::LLT<Matrix> llt(P);
    if (llt.info() != Eigen::Success) throw ParameterDomainError("gaussian: precision is not positive definite");
    return {llt.solve(eta.head(d_)), P};
  }

  bool valid(const Vector& eta) const override {
    if (eta.size() != k() || !eta.allFinite()) return false;
    Eigen::LLT<Matrix> llt(precision(eta));
    return llt.info() == Eigen::Success;
  }

  Vector suff_stats(const Vector& x) const override {
    Vector t(k());
    t.head(d_) = x;
    for (Index i = 0; i < d_; ++i) t[d_ + i] = -0.5 * x[i] * x[i];
    for (std::size_t p = 0; p < pairs_.size(); ++p) t[2 * d_ + p] = -x[pairs_[p].first] * x[pairs_[p].second];
    return t;
  }
  double log_base(const Vector&) const override { return 0.0; }

  double log_normalizer(const Vector& eta) const override {
    Matrix P = precision(eta);
    Eigen::LLT<Matrix> llt(P);
    if (llt.info() != Eigen::Success) throw ParameterDomainError("gaussian: precision is not positive definite");
    Vector h = eta.head(d_);
    const double logdet = 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
    return 0.5 * h.dot(llt.solve(h)) - 0.5 * logdet + 0.5 * static_cast<double>(d_) * special::kLog2Pi;
  }

  Vector draw_noise(Rng& rng) const override { return rng.normal(d_); }
  // x = m + L^{-T} z with P = L L'.
  Vector transform(const Vector& eta, const Vector& z) const override {
    Matrix P = precision(eta);
    Eigen::LLT<Matrix> llt(P);
    if (llt.info() != Eigen::Success) throw ParameterDomainError("gaussian: precision is not positive definite");
    Vector m = llt.solve(eta.head(d_));
    return m + llt.matrixU().solve(z);
  }
  bool has_antithetic() const override { return true; }

  bool has_jacobian() const override { return true; }
  Matrix reparam_jacobian(const Vector& eta, const Vector& z) const override {
    Matrix P = precision(eta);
    Eigen::LLT<Matrix> llt(P);
    if (llt.info() != Eigen::Success) throw ParameterDomainError("gaussian: precision is not positive definite");
    const Matrix L = llt.matrixL();
    const Matrix V = llt.solve(Matrix::Identity(d_, d_));
    const Vector m = V * eta.head(d_);
    const Vector y = llt.matrixU().solve(z);
    const Matrix Linv = L.triangularView<Eigen::Lower>().solve(Matrix::Identity(d_, d_));

    Matrix J(k(), d_);
    for (Index i = 0; i < d_; ++i) J.row(i) = V.col(i).transpose();
    auto row_for = [&](const Matrix& dP) -> Vector {
      Vector dm = -V * (dP * m);
      Matrix inner = Linv * dP * Linv.transpose();
      Matrix phi = inner.triangularView<Eigen::StrictlyLower>();
      phi.diagonal() = 0.5 * inner.diagonal();
      Matrix dL = L * phi;
      Vector dy = -Linv.transpose() * (dL.transpose() * y);
      return dm + dy;
    };
    for (Index i = 0; i < d_; ++i) {
      Matrix dP = Matrix::Zero(d_, d_);
      dP(i, i) = 1.0;
      J.row(d_ + i) = row_for(dP).transpose();
    }
    for (std::size_t p = 0; p < pairs_.size(); ++p) {
      Matrix dP = Matrix::Zero(d_, d_);
      dP(pairs_[p].first, pairs_[p].second) = dP(pairs_[p].second, pairs_[p].first) = 1.0;
      J.row(2 * d_ + p) = row_for(dP).transpose();
    }
    return J;
  }

  Matrix suff_stats_grad(const Vector& x) const override {
    Matrix G = Matrix::Zero(d_, k());
    for (Index i = 0; i < d_; ++i) {
      G(i, i) = 1.0;
      G(i, d_ + i) = -x[i];
    }
    for (std::size_t p = 0; p < pairs_.size(); ++p) {
      auto [i, j] = pairs_[p];
      G(i, 2 * d_ + p) = -x[j];
      G(j, 2 * d_ + p) = -x[i];
    }
    return G;
  }
  Vector log_base_grad(const Vector&) const override { return Vector::Zero(d_); }

  bool has_fisher() const override { return true; }
  Matrix analytic_fisher(const Vector& eta) const override {
    auto mo = moments(eta);
    const Matrix V = linalg::spd_inverse(mo.P);
    // Each augmented statistic as coef * prod(x[idx]).
    struct Mono {
      double c;
      std::vector<Index> idx;
    };
    std::vector<Mono> t;
    t.push_back({1.0, {}});
    for (Index i = 0; i < d_; ++i) t.push_back({1.0, {i}});
    for (Index i = 0; i < d_; ++i) t.push_back({-0.5, {i, i}});
    for (auto [i, j] : pairs_) t.push_back({-1.0, {i, j}});
    const Index n = static_cast<Index>(t.size());
    Matrix F(n, n);
    for (Index a = 0; a < n; ++a)
      for (Index b = a; b < n; ++b) {
        std::vector<Index> idx = t[a].idx;
        idx.insert(idx.end(), t[b].idx.begin(), t[b].idx.end());
        F(a, b) = F(b, a) = t[a].c * t[b].c * raw_moment(mo.m, V, idx);
      }
    return F;
  }

  // E[prod_l x_{idx_l}] for x ~ N(m, V), up to fourth order.
  static double raw_moment(const Vector& m, const Matrix& V, const std::vector<Index>& idx) {
    const int n = static_cast<int>(idx.size());
    double total = 0.0;
    for (int mask = 0; mask < (1 << n); ++mask) {
      std::vector<Index> c;
      double mean_part = 1.0;
      for (int l = 0; l < n; ++l) {
        if (mask & (1 << l))
          c.push_back(idx[l]);
        else
          mean_part *= m[idx[l]];
      }
      double central = 0.0;
      if (c.empty())
        central = 1.0;
      else if (c.size() == 2)
        central = V(c[0], c[1]);
      else if (c.size() == 4)
        central = V(c[0], c[1]) * V(c[2], c[3]) + V(c[0], c[2]) * V(c[1], c[3]) + V(c[0], c[3]) * V(c[1], c[2]);
      total += mean_part * central;
    }
    return total;
  }

 private:
  Index d_;
  std::vector<std::pair<Index, Index>> pairs_;
};

/// d s / d(m, V) for the univariate location-scale sampler s = m + sqrt(V) z.
inline Vector gaussian_mv_jacobian(double V, double z) {
  Vector j(2);
  j << 1.0, z / (2.0 * std::sqrt(V));
  return j;
}

}  // namespace lrvb
