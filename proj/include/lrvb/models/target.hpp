#pragma once

#include <atomic>
#include <functional>
#include <memory>

#include "lrvb/core/rng.hpp"
#include "lrvb/core/types.hpp"

namespace lrvb {

/// An unnormalized log posterior log p(x, y) with optional derivatives.
struct TargetModel {
  Index dim = 0;
  std::function<double(const Vector&)> log_joint;
  std::function<Vector(const Vector&)> grad;
  std::function<Matrix(const Vector&)> hess;

  bool has_grad() const { return static_cast<bool>(grad); }
  bool has_hess() const { return static_cast<bool>(hess); }
};

/// Counts likelihood evaluations. Shared by copies of the wrapped target.
struct EvalCounter {
  std::shared_ptr<std::atomic<long long>> n = std::make_shared<std::atomic<long long>>(0);
  long long value() const { return n->load(); }
  void add(long long k = 1) const { n->fetch_add(k); }
};

inline TargetModel counted(const TargetModel& t, const EvalCounter& c) {
  TargetModel out = t;
  out.log_joint = [f = t.log_joint, c](const Vector& x) {
    c.add();
    return f(x);
  };
  return out;
}

/// log p + c; derivatives unchanged.
inline TargetModel shifted(const TargetModel& t, double c) {
  TargetModel out = t;
  out.log_joint = [f = t.log_joint, c](const Vector& x) { return f(x) + c; };
  return out;
}

}  // namespace lrvb
