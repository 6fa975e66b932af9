// Gaussian approximation to a simulated probit posterior, compared with
// the VBEM baseline and scored with the regression diagnostics.

#include <cstdio>

#include "lrvb/lrvb.hpp"

using namespace lrvb;

int main() {
  Rng rng = Rng(42).split("data-sim");
  models::ProbitData d = models::simulate_probit(100, 5, rng);
  const TargetModel target = models::probit_model(d);

  GaussFit<Matrix> fit = run_gaussian_vb(target, Vector::Zero(5), Matrix::Identity(5, 5), 10000, 1);
  const Matrix V = fit.V();
  models::VbemResult vb = models::vbem_probit_baseline(d);
  FitReport rep = diagnose(approximation(fit.m, V), target, 10000, 2);

  std::printf("%-10s %10s %10s\n", "", "rmse", "log score");
  std::printf("%-10s %10.4f %10.4f\n", "hessian", models::rmse(fit.m, d.true_x), models::log_score(d.true_x, fit.m, V));
  std::printf("%-10s %10.4f %10.4f\n", "vbem", models::rmse(vb.m, d.true_x), models::log_score(d.true_x, vb.m, vb.V));
  std::printf("\nlower bound %.4f, corrected log p(y) %.4f, R^2 %.4f\n", rep.lower_bound, rep.log_marginal,
              rep.r_squared.value_or(std::nan("")));
  return 0;
}
