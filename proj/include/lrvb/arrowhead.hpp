#pragma once

#include <cmath>
#include <optional>

#include "lrvb/core/types.hpp"

namespace lrvb {

/// Symmetric arrowhead matrix: coordinate 0 is the dense head row/column,
/// coordinates 1..p only touch the head and themselves.
///   [ c   b' ]
///   [ b   D  ]
struct Arrowhead {
  double c = 0.0;
  Vector b;
  Vector D;

  Arrowhead() = default;
  explicit Arrowhead(Index n) : c(0.0), b(Vector::Zero(n - 1)), D(Vector::Zero(n - 1)) {}
  Arrowhead(double c_, Vector b_, Vector D_) : c(c_), b(std::move(b_)), D(std::move(D_)) {}

  Index size() const { return D.size() + 1; }

  static Arrowhead from_dense(const Matrix& m, double tol = 0.0) {
    const Index n = m.rows();
    Arrowhead a(n);
    a.c = m(0, 0);
    for (Index i = 1; i < n; ++i) {
      a.b[i - 1] = m(i, 0);
      a.D[i - 1] = m(i, i);
    }
    if (tol >= 0.0) {
      for (Index i = 1; i < n; ++i)
        for (Index j = 1; j < n; ++j)
          if (i != j && std::abs(m(i, j)) > tol) throw ConfigError("matrix does not have arrowhead sparsity");
    }
    return a;
  }
  static Arrowhead identity(Index n) { return Arrowhead(1.0, Vector::Zero(n - 1), Vector::Ones(n - 1)); }

  Matrix to_dense() const {
    const Index n = size();
    Matrix m = Matrix::Zero(n, n);
    m(0, 0) = c;
    m.block(1, 0, n - 1, 1) = b;
    m.block(0, 1, 1, n - 1) = b.transpose();
    m.diagonal().tail(n - 1) = D;
    return m;
  }

  Vector operator*(const Vector& x) const {
    Vector y(size());
    y[0] = c * x[0] + b.dot(x.tail(D.size()));
    y.tail(D.size()) = b * x[0] + D.cwiseProduct(x.tail(D.size()));
    return y;
  }

  bool allFinite() const { return std::isfinite(c) && b.allFinite() && D.allFinite(); }

  Arrowhead& operator+=(const Arrowhead& o) {
    c += o.c;
    b += o.b;
    D += o.D;
    return *this;
  }
  Arrowhead& operator-=(const Arrowhead& o) {
    c -= o.c;
    b -= o.b;
    D -= o.D;
    return *this;
  }
  Arrowhead& operator*=(double s) {
    c *= s;
    b *= s;
    D *= s;
    return *this;
  }
  friend Arrowhead operator+(Arrowhead a, const Arrowhead& o) { return a += o; }
  friend Arrowhead operator-(Arrowhead a, const Arrowhead& o) { return a -= o; }
  friend Arrowhead operator*(double s, Arrowhead a) { return a *= s; }
  Arrowhead operator-() const { return Arrowhead(-c, -b, -D); }
};

/// O(n) Cholesky of an arrowhead matrix with the head ordered last:
/// L = [[sqrt(D), 0], [b'/sqrt(D), sqrt(s)]], s = c - sum b_i^2/D_i.
class ArrowheadFactor {
 public:
  static std::optional<ArrowheadFactor> compute(const Arrowhead& a) {
    if (!a.allFinite()) return std::nullopt;
    ArrowheadFactor f;
    f.a_ = a;
    for (Index i = 0; i < a.D.size(); ++i)
      if (!(a.D[i] > 0.0)) return std::nullopt;
    f.bd_ = a.b.cwiseQuotient(a.D);
    f.s_ = a.c - a.b.dot(f.bd_);
    if (!(f.s_ > 0.0)) return std::nullopt;
    return f;
  }

  Vector solve(const Vector& r) const {
    const Index p = a_.D.size();
    Vector x(p + 1);
    x[0] = (r[0] - bd_.dot(r.tail(p))) / s_;
    x.tail(p) = (r.tail(p) - a_.b * x[0]).cwiseQuotient(a_.D);
    return x;
  }

  // y = L^{-T} z so that y ~ N(0, A^{-1}) for z standard normal.
  Vector solve_upper(const Vector& z) const {
    const Index p = a_.D.size();
    Vector y(p + 1);
    y[0] = z[0] / std::sqrt(s_);
    Vector sd = a_.D.cwiseSqrt();
    y.tail(p) = (z.tail(p) - a_.b.cwiseQuotient(sd) * y[0]).cwiseQuotient(sd);
    return y;
  }

  double log_det() const { return a_.D.array().log().sum() + std::log(s_); }

  // Diagonal of the inverse and the head column of the inverse.
  Vector inverse_diagonal() const {
    Vector v(a_.D.size() + 1);
    v[0] = 1.0 / s_;
    v.tail(a_.D.size()) = a_.D.cwiseInverse() + bd_.cwiseProduct(bd_) / s_;
    return v;
  }
  Vector inverse_head_column() const {
    Vector v(a_.D.size() + 1);
    v[0] = 1.0 / s_;
    v.tail(a_.D.size()) = -bd_ / s_;
    return v;
  }
  Matrix inverse() const {
    const Index p = a_.D.size();
    Matrix V(p + 1, p + 1);
    V(0, 0) = 1.0 / s_;
    V.block(1, 0, p, 1) = -bd_ / s_;
    V.block(0, 1, 1, p) = (-bd_ / s_).transpose();
    V.block(1, 1, p, p) = bd_ * bd_.transpose() / s_;
    V.diagonal().tail(p) += a_.D.cwiseInverse();
    return V;
  }

  double schur() const { return s_; }

 private:
  Arrowhead a_;
  Vector bd_;
  double s_ = 0.0;
};

}  // namespace lrvb
