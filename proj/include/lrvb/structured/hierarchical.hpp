#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "lrvb/core/linalg.hpp"
#include "lrvb/core/rng.hpp"
#include "lrvb/expfam/family.hpp"
#include "lrvb/models/target.hpp"
#include "lrvb/optimizer.hpp"

namespace lrvb {

/// One conditional block q(x_i | x_{<i}) from an exponential family whose
/// natural parameters are affine in declared features of the parents:
/// eta_i = F(x_{<i}) theta_i. Without a feature map F is the identity.
struct CondBlock {
  FamilyPtr family;
  std::function<Matrix(const Vector& parents)> features;  // k x p
  std::function<bool(const Vector& theta)> valid_theta;

  Vector theta;
  Matrix C;
  Vector g;
  Matrix C_bar;
  Vector g_bar;
  long n_avg = 0;
  StepWarnings warnings;

  Index p() const { return theta.size(); }

  Matrix F(const Vector& parents) const {
    if (!features) return Matrix::Identity(family->k(), family->k());
    return features(parents);
  }
  Vector eta(const Vector& parents) const { return F(parents) * theta; }
  bool theta_ok(const Vector& th) const {
    if (!th.allFinite()) return false;
    if (valid_theta) return valid_theta(th);
    return !features && family->valid(th);
  }
};

/// C starts at Var_q[T] when the family has an analytic second moment and
/// identity features, otherwise at the identity; g = C theta.
inline CondBlock make_block(FamilyPtr family, const Vector& theta0, std::function<Matrix(const Vector&)> features = {},
                            std::function<bool(const Vector&)> valid_theta = {}) {
  CondBlock b;
  b.family = std::move(family);
  b.features = std::move(features);
  b.valid_theta = std::move(valid_theta);
  b.theta = theta0;
  if (!b.theta_ok(theta0)) throw ParameterDomainError(b.family->name() + ": invalid initial block parameters");
  const Index p = theta0.size();
  if (!b.features && b.family->has_fisher()) {
    Matrix Fi = b.family->analytic_fisher(theta0);
    const Index k = b.family->k();
    Vector e = Fi.block(1, 0, k, 1);
    b.C = Fi.bottomRightCorner(k, k) - e * e.transpose();
  } else {
    b.C = Matrix::Identity(p, p);
  }
  b.g = b.C * theta0;
  b.C_bar = Matrix::Zero(p, p);
  b.g_bar = Vector::Zero(p);
  return b;
}

struct BlockEstimate {
  Matrix C;
  Vector g;
};

/// Gradient form: C = F' J dT/dx F, g = F' J d/dx (r - log nu), with J the
/// reparameterization Jacobian at eta = F theta and noise z.
inline BlockEstimate block_gradient_estimate(const CondBlock& b, const Vector& parents, const Vector& z, const Vector& x,
                                             const Vector& grad_r) {
  const Matrix F = b.F(parents);
  const Vector eta = F * b.theta;
  const Matrix J = b.family->reparam_jacobian(eta, z);
  const Matrix Ft = F.transpose();
  return {Ft * J * b.family->suff_stats_grad(x) * F, Ft * (J * (grad_r - b.family->log_base_grad(x)))};
}

/// Basic form: centred statistics t = F'(T(x) - E[T | parents]),
/// C = t t', g = t (r - log nu).
inline BlockEstimate block_basic_estimate(const CondBlock& b, const Vector& parents, const Vector& x, double r) {
  if (!b.family->has_fisher()) throw UnsupportedOperation(b.family->name() + ": basic block update needs E[T]");
  const Matrix F = b.F(parents);
  const Index k = b.family->k();
  const Vector e = b.family->analytic_fisher(F * b.theta).block(1, 0, k, 1);
  const Vector t = F.transpose() * (b.family->suff_stats(x) - e);
  return {t * t.transpose(), t * (r - b.family->log_base(x))};
}

/// Geometric-weight update of (C, g) and the proposal theta = C^{-1} g.
/// Returns false when the proposal was rejected (previous theta kept).
inline bool block_apply(CondBlock& b, const BlockEstimate& est, double w, bool in_avg) {
  if (!est.C.allFinite() || !est.g.allFinite()) {
    ++b.warnings.skipped;
    return false;
  }
  b.C = (1.0 - w) * b.C + w * est.C;
  b.g = (1.0 - w) * b.g + w * est.g;
  if (in_avg) {
    b.C_bar += est.C;
    b.g_bar += est.g;
    ++b.n_avg;
  }
  try {
    Vector th = linalg::solve(b.C, b.g);
    if (!b.theta_ok(th)) {
      ++b.warnings.invalid;
      return false;
    }
    b.theta = th;
    return true;
  } catch (const SingularMatrixError&) {
    ++b.warnings.invalid;
    return false;
  }
}

/// theta from the averaged accumulators.
inline Vector block_final(const CondBlock& b) {
  if (b.n_avg == 0) throw NonConvergence("block has no accepted steps in the averaging window");
  Vector th;
  try {
    th = linalg::solve(b.C_bar, b.g_bar);
  } catch (const SingularMatrixError&) {
    throw NonConvergence("averaged block system is singular; increase the number of iterations");
  }
  if (!b.theta_ok(th)) throw NonConvergence("averaged block parameters are outside the domain");
  return th;
}

struct HierDraw {
  Vector x;
  std::vector<Vector> z;
};

/// q(x) = prod_i q(x_i | x_{<i}); block i occupies a contiguous slice of x.
struct HierarchicalApprox {
  std::vector<CondBlock> blocks;

  Index dim() const {
    Index d = 0;
    for (const auto& b : blocks) d += b.family->dim();
    return d;
  }
  Index offset(std::size_t i) const {
    Index o = 0;
    for (std::size_t j = 0; j < i; ++j) o += blocks[j].family->dim();
    return o;
  }
  Vector parents(std::size_t i, const Vector& x) const { return x.head(offset(i)); }
  Vector slice(std::size_t i, const Vector& x) const { return x.segment(offset(i), blocks[i].family->dim()); }

  double log_conditional(std::size_t i, const Vector& x) const {
    const auto& b = blocks[i];
    return lrvb::log_density(*b.family, b.eta(parents(i, x)), slice(i, x));
  }
  double log_density(const Vector& x) const {
    double s = 0.0;
    for (std::size_t i = 0; i < blocks.size(); ++i) s += log_conditional(i, x);
    return s;
  }

  HierDraw sample(Rng& rng) const {
    HierDraw d;
    d.x = Vector::Zero(dim());
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const auto& b = blocks[i];
      Draw di = b.family->sample(b.eta(parents(i, d.x)), rng);
      d.x.segment(offset(i), b.family->dim()) = di.x;
      d.z.push_back(di.z);
    }
    return d;
  }
};

/// r_{-i}(x) = log p(x) - log q(x) + log q(x_i | x_{<i}).
inline double block_residual(const HierarchicalApprox& q, std::size_t i, const Vector& x, double logp) {
  return logp - q.log_density(x) + q.log_conditional(i, x);
}

/// d r_{-i} / d x_i with later blocks held at their sampled values. The
/// dependence of later conditionals on x_i is differenced numerically.
inline Vector block_residual_grad(const HierarchicalApprox& q, std::size_t i, const Vector& x, const Vector& grad_logp,
                                  double h = 1e-6) {
  const Index o = q.offset(i), d = q.blocks[i].family->dim();
  Vector gr = grad_logp.segment(o, d);
  for (std::size_t j = i + 1; j < q.blocks.size(); ++j) {
    if (!q.blocks[j].features) continue;
    for (Index c = 0; c < d; ++c) {
      Vector xp = x, xm = x;
      const double hc = h * std::max(1.0, std::abs(x[o + c]));
      xp[o + c] += hc;
      xm[o + c] -= hc;
      gr[c] -= (q.log_conditional(j, xp) - q.log_conditional(j, xm)) / (2.0 * hc);
    }
  }
  return gr;
}

enum class BlockMode { basic, gradient };

/// Updates block i from the joint draw; later blocks are untouched.
inline bool block_update(HierarchicalApprox& q, std::size_t i, const HierDraw& draw, const TargetModel& target, double w,
                         bool in_avg, BlockMode mode) {
  auto& b = q.blocks[i];
  const Vector par = q.parents(i, draw.x);
  const Vector xi = q.slice(i, draw.x);
  BlockEstimate est;
  if (mode == BlockMode::gradient) {
    if (!target.has_grad()) throw UnsupportedOperation("gradient block update needs the target gradient");
    est = block_gradient_estimate(b, par, draw.z[i], xi, block_residual_grad(q, i, draw.x, target.grad(draw.x)));
  } else {
    est = block_basic_estimate(b, par, xi, block_residual(q, i, draw.x, target.log_joint(draw.x)));
  }
  return block_apply(b, est, w, in_avg);
}

struct HierarchicalFit {
  HierarchicalApprox approx;  // blocks carry the averaged parameters
  long long evals = 0;
};

/// N sweeps; each sweep draws x* in block order then updates every block.
inline HierarchicalFit run_hierarchical(HierarchicalApprox q, const TargetModel& target, long N, std::uint64_t seed,
                                        BlockMode mode = BlockMode::gradient) {
  if (N < 2) throw ConfigError("hierarchical fit needs N >= 2");
  Rng rng = Rng(seed).split("hierarchical");
  const double w = 1.0 / std::sqrt(static_cast<double>(N));
  long long evals = 0;
  for (long t = 1; t <= N; ++t) {
    const bool in_avg = 2 * t > N;
    HierDraw d = q.sample(rng);
    ++evals;
    for (std::size_t i = 0; i < q.blocks.size(); ++i) block_update(q, i, d, target, w, in_avg, mode);
  }
  for (auto& b : q.blocks) b.theta = block_final(b);
  return {std::move(q), evals};
}

}  // namespace lrvb
