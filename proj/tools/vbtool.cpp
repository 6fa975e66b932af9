// vbtool: seeded experiment runner writing CSV and JSON artifacts.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "lrvb/experiments.hpp"
#include "lrvb/io/csv.hpp"
#include "lrvb/io/report.hpp"

#ifndef LRVB_GIT_REV
#define LRVB_GIT_REV "unknown"
#endif

namespace fs = std::filesystem;
using namespace lrvb;
using io::Json;
using io::Row;

namespace {

enum Exit { kOk = 0, kFailure = 1, kMissingData = 2, kInvalidConfig = 3, kNonConvergence = 4 };

const std::vector<std::string> kExperiments{"toy-exp", "estimators", "probit", "betabin", "stochvol"};

struct ExperimentConfig {
  std::string experiment;
  long iters = 0;  // 0 = experiment default
  std::uint64_t seed = 1;
  std::string estimator;
  int repeats = 0;
  long minibatches = 10;
  long components = 8;
  std::string data_path;
  std::string output_dir = ".";
  long long eval_budget = 0;
  double lambda = 2.0;
  long oracle_sweeps = 0;
};

long default_iters(const std::string& e) {
  if (e == "toy-exp") return 1000;
  if (e == "estimators") return 10000;
  if (e == "probit") return 10000;
  if (e == "betabin") return 20000;
  return 500;
}

Json echo(const ExperimentConfig& c) {
  return Json{{"experiment", c.experiment},
              {"iters", c.iters},
              {"seed", c.seed},
              {"estimator", c.estimator},
              {"repeats", c.repeats},
              {"minibatches", c.minibatches},
              {"components", c.components},
              {"data", c.data_path},
              {"out", c.output_dir},
              {"likelihood_eval_budget", c.eval_budget},
              {"lambda", c.lambda},
              {"oracle_sweeps", c.oracle_sweeps}};
}

// Keys mirror the long flag names with '-' replaced by '_'.
void apply_config_file(const std::string& path, ExperimentConfig& c) {
  Json j;
  try {
    j = Json::parse(io::read_text(path));
  } catch (const io::MissingFile& e) {
    throw ConfigError(std::string("config file: ") + e.what());
  } catch (const Json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(path + ": expected a JSON object");
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "experiment") c.experiment = v.get<std::string>();
      else if (k == "iters") c.iters = v.get<long>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "estimator") c.estimator = v.get<std::string>();
      else if (k == "repeats") c.repeats = v.get<int>();
      else if (k == "minibatches") c.minibatches = v.get<long>();
      else if (k == "components") c.components = v.get<long>();
      else if (k == "data") c.data_path = v.get<std::string>();
      else if (k == "out") c.output_dir = v.get<std::string>();
      else if (k == "likelihood_eval_budget") c.eval_budget = v.get<long long>();
      else if (k == "lambda") c.lambda = v.get<double>();
      else if (k == "oracle_sweeps") c.oracle_sweeps = v.get<long>();
      else throw ConfigError(path + ": unknown key '" + k + "'");
    }
  } catch (const Json::type_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void validate(ExperimentConfig& c) {
  if (std::find(kExperiments.begin(), kExperiments.end(), c.experiment) == kExperiments.end())
    throw ConfigError("unknown experiment '" + c.experiment + "'");
  if (c.iters == 0) c.iters = default_iters(c.experiment);
  if (c.eval_budget < 0) throw ConfigError("--likelihood-eval-budget must be non-negative");
  const auto& e = c.experiment;
  if (e == "toy-exp" || e == "estimators") {
    if (!(c.lambda > 0.0) || !std::isfinite(c.lambda)) throw ConfigError("--lambda must be positive");
    if (c.iters < 4) throw ConfigError("--iters must be at least 4 for the exponential toy");
    if (!c.data_path.empty()) throw ConfigError("--data is not used by " + e);
  } else if (c.iters < 2) {
    throw ConfigError("--iters must be at least 2");
  }
  if (!c.estimator.empty()) {
    const EstimatorKind k = parse_estimator_kind(c.estimator);
    const bool regression = k == EstimatorKind::same_draw || k == EstimatorKind::separate_draw || k == EstimatorKind::analytic_c;
    if ((e == "toy-exp" || e == "estimators") && !regression)
      throw ConfigError("the exponential toy takes same_draw, separate_draw or analytic_c");
    if (e == "betabin" || e == "stochvol") throw ConfigError("--estimator is not used by " + e);
    if (e == "probit" && k == EstimatorKind::analytic_c) throw ConfigError("analytic_c has no closed form for the probit model");
  }
  if (c.repeats == 0) c.repeats = e == "estimators" ? 100 : 1;
  if (c.repeats < 1) throw ConfigError("--repeats must be positive");
  if (e == "estimators" && c.repeats < 2) throw ConfigError("--repeats must be at least 2 for a standard deviation");
  if (e == "probit" && !c.data_path.empty() && c.repeats != 1) throw ConfigError("--repeats applies to simulated datasets only");
  if (c.minibatches < 1) throw ConfigError("--minibatches must be positive");
  if (c.components < 1 || c.components > 64) throw ConfigError("--components must be in [1, 64]");
  if (c.oracle_sweeps < 0) throw ConfigError("--oracle-sweeps must be non-negative");
  if (c.output_dir.empty()) throw ConfigError("--out must not be empty");
}

struct Artifacts {
  Json report = Json::object();
  std::map<std::string, std::string> files;  // name -> contents
};

std::string trace_csv(const std::vector<TraceRecord>& tr, const std::vector<std::string>& param_names) {
  std::vector<std::string> h{"iteration", "likelihood_evals"};
  h.insert(h.end(), param_names.begin(), param_names.end());
  h.push_back("invalid");
  h.push_back("skipped");
  std::vector<Row> rows;
  for (const auto& r : tr) {
    Row row{static_cast<long long>(r.t), static_cast<long long>(r.evals)};
    for (std::size_t j = 0; j < param_names.size(); ++j)
      row.push_back(static_cast<Index>(j) < r.params.size() ? r.params[static_cast<Index>(j)] : std::nan(""));
    row.push_back(static_cast<long long>(r.invalid));
    row.push_back(static_cast<long long>(r.skipped));
    rows.push_back(std::move(row));
  }
  return io::to_csv(h, rows);
}

Json vec(const Vector& v) {
  Json a = Json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(io::number(v[i]));
  return a;
}

Artifacts run_toy(const ExperimentConfig& c) {
  const EstimatorKind k = c.estimator.empty() ? EstimatorKind::same_draw : parse_estimator_kind(c.estimator);
  auto r = experiments::toy_exp(c.lambda, c.iters, k, c.seed, c.eval_budget, true);
  Artifacts a;
  auto f = std::make_shared<ExponentialFamily>();
  a.report["result"] = {{"eta", r.fit.params.eta[0]},
                        {"eta0", r.fit.params.eta0},
                        {"lambda", c.lambda},
                        {"likelihood_evals", r.fit.evals}};
  a.report["fit_report"] = io::to_json(
      diagnose(approximation(f, r.fit.params.eta), models::exp_toy_model(c.lambda), 10000, Rng(c.seed).split("diagnostics").key()));
  a.files["trace.csv"] = trace_csv(r.trace, {"eta0", "eta"});
  return a;
}

std::vector<long> n_grid(long iters) {
  std::vector<long> g;
  for (double x = 10.0; x < static_cast<double>(iters); x *= std::sqrt(10.0)) g.push_back(std::lround(x));
  g.push_back(iters);
  return g;
}

Artifacts run_estimators(const ExperimentConfig& c) {
  std::vector<EstimatorKind> kinds{EstimatorKind::same_draw, EstimatorKind::separate_draw, EstimatorKind::analytic_c};
  if (!c.estimator.empty()) kinds = {parse_estimator_kind(c.estimator)};
  std::vector<long> Ns = n_grid(c.iters);
  if (c.eval_budget > 0)
    for (long& N : Ns) N = std::min<long>(N, c.eval_budget);
  Ns.erase(std::unique(Ns.begin(), Ns.end()), Ns.end());
  auto rows = experiments::estimator_study(c.lambda, Ns, kinds, c.repeats, c.seed);
  std::vector<Row> out;
  Json js = Json::array();
  for (const auto& r : rows) {
    out.push_back({r.method, static_cast<long long>(r.N), r.mean, r.sd});
    js.push_back({{"method", r.method}, {"N", r.N}, {"mean", io::number(r.mean)}, {"sd", io::number(r.sd)}, {"failed", r.failed}});
  }
  Artifacts a;
  a.report["result"] = {{"lambda", c.lambda}, {"rows", js}};
  a.report["fit_report"] = nullptr;
  a.files["estimators.csv"] = io::to_csv({"method", "N", "mean", "sd"}, out);
  return a;
}

Artifacts run_probit(const ExperimentConfig& c) {
  std::vector<models::ProbitData> data;
  if (!c.data_path.empty()) {
    data.push_back(io::load_probit(c.data_path));
  } else {
    for (int r = 0; r < c.repeats; ++r) {
      Rng rng = Rng(c.seed).split("data-sim").split(static_cast<std::uint64_t>(r));
      data.push_back(models::simulate_probit(100, 5, rng));
    }
  }
  for (const auto& d : data)
    if (c.minibatches > d.n()) throw ConfigError("--minibatches exceeds the number of observations");
  const long mb_passes = c.eval_budget > 0 ? std::max(1L, static_cast<long>(c.eval_budget)) : 20;
  std::vector<experiments::ProbitPaths> paths(data.size());
  std::vector<std::optional<long>> passes(data.size());
  std::vector<double> mb_rmse(data.size(), std::nan(""));
  parallel_for(data.size(), [&](std::size_t i) {
    experiments::ProbitOptions o;
    o.iters = c.iters;
    o.seed = Rng(c.seed).split("probit").split(static_cast<std::uint64_t>(i)).key();
    o.keep_curve = true;
    o.budget = c.eval_budget;
    o.basic = c.estimator.empty() || c.estimator == "same_draw" || c.estimator == "separate_draw";
    paths[i] = experiments::probit_paths(data[i], o);
    if (data[i].true_x.size() == data[i].m()) {
      const std::uint64_t s = Rng(o.seed).split("minibatch").key();
      passes[i] = experiments::passes_to_rmse(data[i], c.minibatches, paths[i].rmse_vbem, mb_passes, s);
      mb_rmse[i] = models::rmse(experiments::probit_minibatch_fit(data[i], c.minibatches, mb_passes, s).m, data[i].true_x);
    }
  });
  std::vector<Row> trace;
  Json per = Json::array();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& p = paths[i];
    for (const auto& cp : p.curve)
      trace.push_back({static_cast<long long>(cp.t), cp.evals, cp.rmse, cp.method, static_cast<long long>(i)});
    per.push_back({{"dataset", i},
                   {"rmse", {{"basic", io::number(p.rmse_basic)},
                             {"factorized", io::number(p.rmse_factorized)},
                             {"gradient", io::number(p.rmse_gradient)},
                             {"hessian", io::number(p.rmse_hessian)},
                             {"minibatch", io::number(mb_rmse[i])},
                             {"vbem", io::number(p.rmse_vbem)}}},
                   {"likelihood_evals", {{"basic", p.evals_basic},
                                         {"factorized", p.evals_factorized},
                                         {"gradient", p.evals_gradient},
                                         {"hessian", p.evals_hessian},
                                         {"minibatch", static_cast<double>(mb_passes)}}},
                   {"log_score", io::number(p.log_score)},
                   {"log_score_vbem", io::number(p.log_score_vbem)},
                   {"r_squared", io::number(p.r_squared)},
                   {"passes_to_vbem_rmse", passes[i] ? Json(*passes[i]) : Json(nullptr)},
                   {"mean", vec(p.m)}});
  }
  Artifacts a;
  a.report["result"] = {{"minibatches", c.minibatches}, {"minibatch_passes", mb_passes}, {"datasets", per}};
  a.report["fit_report"] = io::to_json(paths.front().report);
  a.files["trace.csv"] = io::to_csv({"iteration", "likelihood_evals", "rmse", "method", "dataset"}, trace);
  return a;
}

Artifacts run_betabin(const ExperimentConfig& c) {
  const bool simulated = c.data_path.empty();
  models::BetaBinData d = simulated ? experiments::betabin_fallback(c.seed) : io::load_betabin(c.data_path);
  long per_fit = c.iters;
  if (c.eval_budget > 0) per_fit = std::min<long>(per_fit, static_cast<long>(c.eval_budget / c.components));
  if (per_fit < 2) throw ConfigError("--likelihood-eval-budget leaves fewer than 2 iterations per mixture fit");
  auto sw = experiments::betabin_sweep(d, static_cast<Index>(c.components), per_fit, c.seed);
  std::vector<Row> rows;
  Json js = Json::array();
  for (const auto& r : sw.rows) {
    rows.push_back({static_cast<long long>(r.L), r.quad_kl, r.half_s2, r.lower_bound, r.corrected_logZ,
                    r.r_squared ? *r.r_squared : std::nan("")});
    js.push_back({{"L", r.L}, {"quad_kl", io::number(r.quad_kl)}, {"fit_report", io::to_json(r.report)}});
  }
  Artifacts a;
  a.report["result"] = {{"simulated_data", simulated},
                        {"quadrature_log_Z", sw.log_Z},
                        {"likelihood_evals", static_cast<long long>(per_fit) * c.components},
                        {"components", js}};
  a.report["fit_report"] = io::to_json(sw.rows.back().report);
  a.files["kl_vs_components.csv"] =
      io::to_csv({"L", "quad_kl", "half_s2", "lower_bound", "corrected_logZ", "r_squared"}, rows);
  return a;
}

Artifacts run_stochvol(const ExperimentConfig& c) {
  const bool simulated = c.data_path.empty();
  models::SVData d = simulated ? experiments::sv_fallback(c.seed) : io::load_sv(c.data_path);
  auto r = experiments::stochvol(d, c.iters, c.seed, c.eval_budget);
  Artifacts a;
  Json res = {{"simulated_data", simulated},
              {"T", d.y.size()},
              {"iterations", r.fit.iters},
              {"likelihood_evals", r.fit.evals},
              {"rejected_steps", r.fit.rejected},
              {"lower_bound", io::number(r.lower_bound)},
              {"posterior_mean", {{"phi", r.summary.phi}, {"sigma2", r.summary.sigma2}, {"sigma", r.summary.sigma}, {"beta", r.summary.beta}, {"log_beta", r.summary.log_beta}}},
              {"beta_median", r.summary.beta_median},
              {"v_mean", vec(r.summary.v)}};
  if (c.oracle_sweeps > 0) {
    auto ch = models::sv_mcmc_oracle(d, models::SVPrior{}, c.oracle_sweeps, c.oracle_sweeps / 5,
                                     Rng(c.seed).split("oracle").key());
    auto iv = [](const std::vector<double>& x) {
      auto [lo, hi] = models::central_interval(x);
      return Json::array({lo, hi});
    };
    res["oracle_95"] = {{"phi", iv(ch.phi)}, {"sigma2", iv(ch.sigma2)}, {"beta", iv(ch.beta)}};
    res["oracle_accept"] = {{"phi", ch.accept_phi}, {"v", ch.accept_v}};
  }
  a.report["result"] = res;
  a.report["fit_report"] = io::to_json(r.report);
  a.files["trace.csv"] = trace_csv(r.trace, {"mean_phi", "theta1", "eta7_0"});
  return a;
}

Artifacts dispatch(const ExperimentConfig& c) {
  if (c.experiment == "toy-exp") return run_toy(c);
  if (c.experiment == "estimators") return run_estimators(c);
  if (c.experiment == "probit") return run_probit(c);
  if (c.experiment == "betabin") return run_betabin(c);
  return run_stochvol(c);
}

// Files are built in memory and written by this single collector.
void write_all(const ExperimentConfig& c, Artifacts& a) {
  std::error_code ec;
  fs::create_directories(c.output_dir, ec);
  if (ec) throw io::IoError(c.output_dir + ": " + ec.message());
  Json report = Json::object();
  report["config"] = echo(c);
  report["build"] = io::to_json(io::BuildInfo{"vbtool", LRVB_GIT_REV, __VERSION__});
  for (auto& [k, v] : a.report.items()) report[k] = v;
  io::write_text((fs::path(c.output_dir) / "report.json").string(), io::dump(report));
  for (const auto& [name, text] : a.files) io::write_text((fs::path(c.output_dir) / name).string(), text);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fixed-form variational Bayes experiments"};
  ExperimentConfig flags;
  std::string config_path;
  app.add_option("experiment", flags.experiment, "toy-exp | estimators | probit | betabin | stochvol");
  app.add_option("--iters", flags.iters, "iterations N");
  app.add_option("--seed", flags.seed, "root seed");
  app.add_option("--estimator", flags.estimator, "same_draw | separate_draw | analytic_c | gradient | hessian");
  app.add_option("--repeats", flags.repeats, "repeats (estimators) or simulated datasets (probit)");
  app.add_option("--minibatches", flags.minibatches, "minibatches per pass (probit)");
  app.add_option("--components", flags.components, "largest mixture size L (betabin)");
  app.add_option("--data", flags.data_path, "CSV data file");
  app.add_option("--out", flags.output_dir, "output directory");
  app.add_option("--likelihood-eval-budget", flags.eval_budget, "cap on likelihood evaluations, 0 = none");
  app.add_option("--lambda", flags.lambda, "exponential rate (toy-exp, estimators)");
  app.add_option("--oracle-sweeps", flags.oracle_sweeps, "MCMC sweeps for the stochvol reference, 0 = skip");
  app.add_option("--config", config_path, "JSON config file; flags override its values");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kInvalidConfig;
  }

  try {
    ExperimentConfig c;
    if (!config_path.empty()) apply_config_file(config_path, c);
    auto given = [&](const char* name) { return app.count(name) > 0; };
    if (given("experiment")) c.experiment = flags.experiment;
    if (given("--iters")) c.iters = flags.iters;
    if (given("--seed")) c.seed = flags.seed;
    if (given("--estimator")) c.estimator = flags.estimator;
    if (given("--repeats")) c.repeats = flags.repeats;
    if (given("--minibatches")) c.minibatches = flags.minibatches;
    if (given("--components")) c.components = flags.components;
    if (given("--data")) c.data_path = flags.data_path;
    if (given("--out")) c.output_dir = flags.output_dir;
    if (given("--likelihood-eval-budget")) c.eval_budget = flags.eval_budget;
    if (given("--lambda")) c.lambda = flags.lambda;
    if (given("--oracle-sweeps")) c.oracle_sweeps = flags.oracle_sweeps;
    validate(c);
    Artifacts a = dispatch(c);
    write_all(c, a);
    return kOk;
  } catch (const io::MissingFile& e) {
    std::cerr << "vbtool: missing data file: " << e.what() << "\n";
    return kMissingData;
  } catch (const ConfigError& e) {
    std::cerr << "vbtool: invalid config: " << e.what() << "\n";
    return kInvalidConfig;
  } catch (const DataError& e) {
    std::cerr << "vbtool: invalid data: " << e.what() << "\n";
    return kInvalidConfig;
  } catch (const NonConvergence& e) {
    std::cerr << "vbtool: did not converge: " << e.what() << "\n";
    return kNonConvergence;
  } catch (const std::exception& e) {
    std::cerr << "vbtool: " << e.what() << "\n";
    return kFailure;
  }
}
