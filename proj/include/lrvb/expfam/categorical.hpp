#pragma once

#include <cmath>

#include "lrvb/expfam/family.hpp"

namespace lrvb {

/// Categorical over {0..L-1}, with the last category as reference:
/// T(x) = one-hot of the first L-1 categories, U = log(1 + sum exp(eta)).
/// Points are 1-vectors holding the category index.
class CategoricalFamily final : public Family {
 public:
  explicit CategoricalFamily(Index L) : L_(L) {
    if (L < 1) throw ConfigError("categorical: need at least one category");
  }

  std::string name() const override { return "categorical"; }
  Index k() const override { return L_ - 1; }
  Index dim() const override { return 1; }
  Index categories() const { return L_; }

  bool valid(const Vector& eta) const override { return eta.size() == L_ - 1 && eta.allFinite(); }
  Vector suff_stats(const Vector& x) const override {
    Vector t = Vector::Zero(L_ - 1);
    const auto c = static_cast<Index>(x[0]);
    if (c < L_ - 1) t[c] = 1.0;
    return t;
  }
  double log_base(const Vector&) const override { return 0.0; }
  double log_normalizer(const Vector& eta) const override {
    double mx = 0.0;
    for (Index i = 0; i < eta.size(); ++i) mx = std::max(mx, eta[i]);
    double s = std::exp(-mx);
    for (Index i = 0; i < eta.size(); ++i) s += std::exp(eta[i] - mx);
    return mx + std::log(s);
  }
  bool in_support(const Vector& x) const override {
    return x[0] >= 0.0 && x[0] < static_cast<double>(L_) && x[0] == std::floor(x[0]);
  }

  Vector probabilities(const Vector& eta) const {
    const double U = log_normalizer(eta);
    Vector p(L_);
    for (Index i = 0; i < L_ - 1; ++i) p[i] = std::exp(eta[i] - U);
    p[L_ - 1] = std::exp(-U);
    return p;
  }

  Vector draw_noise(Rng& rng) const override { return Vector::Constant(1, rng.uniform()); }
  Vector transform(const Vector& eta, const Vector& z) const override {
    Vector p = probabilities(eta);
    double acc = 0.0;
    for (Index i = 0; i < L_; ++i) {
      acc += p[i];
      if (z[0] < acc) return Vector::Constant(1, static_cast<double>(i));
    }
    return Vector::Constant(1, static_cast<double>(L_ - 1));
  }

  bool has_fisher() const override { return true; }
  Matrix analytic_fisher(const Vector& eta) const override {
    Vector p = probabilities(eta).head(L_ - 1);
    Matrix F = Matrix::Zero(L_, L_);
    F(0, 0) = 1.0;
    F.block(0, 1, 1, L_ - 1) = p.transpose();
    F.block(1, 0, L_ - 1, 1) = p;
    F.block(1, 1, L_ - 1, L_ - 1) = p.asDiagonal();
    return F;
  }

 private:
  Index L_;
};

}  // namespace lrvb
