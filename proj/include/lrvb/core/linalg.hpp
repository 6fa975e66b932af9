#pragma once

#include <cmath>
#include <optional>

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include "lrvb/core/types.hpp"

namespace lrvb::linalg {

/// Cholesky factor of a symmetric matrix. On failure, jitter of
/// 1e-10 * trace/dim is added and grown by a factor of ten, up to three
/// retries. Returns nullopt when the matrix is not (numerically) positive
/// definite even after jitter.
inline std::optional<Eigen::LLT<Matrix>> jittered_cholesky(const Matrix& a) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() == Eigen::Success) return llt;
  const double n = static_cast<double>(a.rows());
  double base = 1e-10 * std::abs(a.trace()) / (n > 0 ? n : 1.0);
  if (!(base > 0.0) || !std::isfinite(base)) return std::nullopt;
  for (int attempt = 0; attempt < 3; ++attempt) {
    Matrix b = a;
    b.diagonal().array() += base;
    llt.compute(b);
    if (llt.info() == Eigen::Success) return llt;
    base *= 10.0;
  }
  return std::nullopt;
}

/// Strict positive-definiteness test (no jitter).
inline bool is_positive_definite(const Matrix& a) {
  if (a.rows() != a.cols()) return false;
  if (!a.allFinite()) return false;
  if (!a.isApprox(a.transpose(), 1e-10) && (a - a.transpose()).norm() > 1e-12 * (1.0 + a.norm()))
    return false;
  Eigen::LLT<Matrix> llt(a);
  return llt.info() == Eigen::Success;
}

inline bool is_symmetric(const Matrix& a, double tol = 1e-12) {
  return a.rows() == a.cols() && (a - a.transpose()).cwiseAbs().maxCoeff() <= tol * (1.0 + a.cwiseAbs().maxCoeff());
}

/// Solves a x = b. Symmetric systems go through the jittered Cholesky;
/// anything else through full-pivot LU with a rank check.
/// Throws SingularMatrixError when no solution is available.
inline Vector solve(const Matrix& a, const Vector& b) {
  if (!a.allFinite() || !b.allFinite()) throw SingularMatrixError("non-finite system");
  if (is_symmetric(a)) {
    if (auto llt = jittered_cholesky(a)) {
      Vector x = llt->solve(b);
      if (x.allFinite()) return x;
    }
  }
  Eigen::FullPivLU<Matrix> lu(a);
  lu.setThreshold(1e-13);
  if (!lu.isInvertible()) throw SingularMatrixError("system matrix is singular");
  Vector x = lu.solve(b);
  if (!x.allFinite()) throw SingularMatrixError("solution is not finite");
  return x;
}

/// Inverse of a symmetric positive-definite matrix.
inline Matrix spd_inverse(const Matrix& a) {
  auto llt = jittered_cholesky(a);
  if (!llt) throw SingularMatrixError("matrix is not positive definite");
  return llt->solve(Matrix::Identity(a.rows(), a.cols()));
}

inline double log_det_spd(const Matrix& a) {
  auto llt = jittered_cholesky(a);
  if (!llt) throw SingularMatrixError("matrix is not positive definite");
  const Matrix& l = llt->matrixLLT();
  return 2.0 * l.diagonal().array().log().sum();
}

inline Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

}  // namespace lrvb::linalg
