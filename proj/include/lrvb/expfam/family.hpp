#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "lrvb/core/rng.hpp"
#include "lrvb/core/types.hpp"

namespace lrvb {

/// A draw x* = s(eta, z*) together with the noise that produced it.
struct Draw {
  Vector x;
  Vector z;
};

/// Exponential family q(x) = exp(T(x) eta - U(eta)) nu(x).
///
/// Each concrete family fixes its own T convention; callers only go through
/// this interface. Points are vectors of length dim(), noise vectors have
/// length noise_dim().
class Family {
 public:
  virtual ~Family() = default;

  virtual std::string name() const = 0;
  virtual Index k() const = 0;
  virtual Index dim() const = 0;
  virtual Index noise_dim() const { return dim(); }

  virtual bool valid(const Vector& eta) const = 0;
  virtual Vector suff_stats(const Vector& x) const = 0;
  virtual double log_base(const Vector& x) const = 0;
  virtual double log_normalizer(const Vector& eta) const = 0;

  virtual Vector draw_noise(Rng& rng) const = 0;
  virtual Vector transform(const Vector& eta, const Vector& z) const = 0;

  // Mirrored noise for antithetic pairs. Only location-scale families.
  virtual bool has_antithetic() const { return false; }
  virtual Vector mirror(const Vector& z) const { return -z; }

  // d s(eta, z) / d eta as a k x dim matrix.
  virtual bool has_jacobian() const { return false; }
  virtual Matrix reparam_jacobian(const Vector& /*eta*/, const Vector& /*z*/) const {
    throw UnsupportedOperation(name() + ": no differentiable sampler");
  }
  // d T / d x as a dim x k matrix, and the gradient of log nu.
  virtual Matrix suff_stats_grad(const Vector& /*x*/) const {
    throw UnsupportedOperation(name() + ": no sufficient-statistic gradient");
  }
  virtual Vector log_base_grad(const Vector& /*x*/) const {
    throw UnsupportedOperation(name() + ": no base-measure gradient");
  }

  // E_q[T~' T~] with T~ = (1, T).
  virtual bool has_fisher() const { return false; }
  virtual Matrix analytic_fisher(const Vector& /*eta*/) const {
    throw UnsupportedOperation(name() + ": no analytic second moment");
  }

  // Whether x lies in the support (log density is -inf outside).
  virtual bool in_support(const Vector& /*x*/) const { return true; }

  Draw sample(const Vector& eta, Rng& rng) const {
    require_valid(eta);
    Draw d;
    d.z = draw_noise(rng);
    d.x = transform(eta, d.z);
    return d;
  }

  void require_valid(const Vector& eta) const {
    if (eta.size() != k() || !valid(eta)) throw ParameterDomainError(name() + ": invalid natural parameters");
  }

  Vector augmented_stats(const Vector& x) const {
    Vector t(k() + 1);
    t[0] = 1.0;
    t.tail(k()) = suff_stats(x);
    return t;
  }
};

using FamilyPtr = std::shared_ptr<const Family>;

/// (eta0, eta): intercept plus natural parameters, paired with T~ = (1, T).
struct AugmentedParams {
  double eta0 = 0.0;
  Vector eta;

  static AugmentedParams from_vector(const Vector& v) { return {v[0], v.tail(v.size() - 1)}; }
  Vector as_vector() const {
    Vector v(eta.size() + 1);
    v[0] = eta0;
    v.tail(eta.size()) = eta;
    return v;
  }
};

/// Normalized params: eta0 = -U(eta).
inline AugmentedParams normalized_params(const Family& f, const Vector& eta) {
  return {-f.log_normalizer(eta), eta};
}

inline double log_normalizer(const Family& f, const Vector& eta) {
  f.require_valid(eta);
  return f.log_normalizer(eta);
}

/// T(x) eta + eta0 + log nu(x), or T(x) eta - U(eta) + log nu(x) when normalized.
inline double log_density(const Family& f, const AugmentedParams& p, const Vector& x, bool normalized) {
  if (normalized) f.require_valid(p.eta);
  if (!f.in_support(x)) return -std::numeric_limits<double>::infinity();
  const double lin = f.suff_stats(x).dot(p.eta) + f.log_base(x);
  return normalized ? lin - f.log_normalizer(p.eta) : lin + p.eta0;
}

inline double log_density(const Family& f, const Vector& eta, const Vector& x) {
  return log_density(f, AugmentedParams{0.0, eta}, x, true);
}

inline Draw sample_with_noise(const Family& f, const Vector& eta, Rng& rng) { return f.sample(eta, rng); }

}  // namespace lrvb
