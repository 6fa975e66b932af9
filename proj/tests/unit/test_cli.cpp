#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <string>

#include <json.hpp>

#include "lrvb/io/csv.hpp"

namespace fs = std::filesystem;
using namespace lrvb;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("vbtool_test_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int vbtool(const std::string& args) {
  const std::string cmd = std::string(VBTOOL_PATH) + " " + args + " 2>/dev/null";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(io::read_text(p.string())); }

}  // namespace

TEST(Csv, EmptyRowsGiveHeaderOnly) {
  EXPECT_EQ(io::to_csv({"L", "quad_kl"}, {}), "L,quad_kl\n");
  fs::path d = scratch("empty");
  io::write_csv((d / "x.csv").string(), {"a", "b", "c"}, {});
  EXPECT_EQ(io::read_text((d / "x.csv").string()), "a,b,c\n");
}

TEST(Csv, RoundTripIsBitwise) {
  std::mt19937_64 eng(7);
  std::vector<double> xs{0.0,
                         -0.0,
                         1.0 / 3.0,
                         std::numeric_limits<double>::min(),
                         std::numeric_limits<double>::denorm_min(),
                         std::numeric_limits<double>::max(),
                         -std::numeric_limits<double>::lowest(),
                         std::numeric_limits<double>::infinity(),
                         -std::numeric_limits<double>::infinity()};
  for (int i = 0; i < 2000; ++i) {
    std::uint64_t bits = eng();
    double x;
    std::memcpy(&x, &bits, sizeof x);
    if (std::isfinite(x)) xs.push_back(x);
  }
  std::vector<io::Row> rows;
  for (double x : xs) rows.push_back({x, static_cast<long long>(rows.size())});
  io::Table t = io::parse_csv(io::to_csv({"value", "index"}, rows));
  ASSERT_EQ(t.rows.size(), xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double back = io::parse_double(t.rows[i][0]);
    EXPECT_EQ(std::memcmp(&back, &xs[i], sizeof back), 0) << t.rows[i][0];
  }
  EXPECT_TRUE(std::isnan(io::parse_double(io::format_double(std::nan("")))));
}

TEST(Csv, RejectsRaggedRows) {
  EXPECT_THROW(io::to_csv({"a", "b"}, {{1.0}}), ConfigError);
  EXPECT_THROW(io::parse_csv("a,b\n1,2\n3\n"), DataError);
}

TEST(Csv, LoadersValidateHeaders) {
  EXPECT_THROW(io::probit_from_table(io::parse_csv("y,x1\n1,0.5\n")), DataError);
  EXPECT_THROW(io::betabin_from_table(io::parse_csv("y,n\n1,10\n")), DataError);
  EXPECT_THROW(io::sv_from_table(io::parse_csv("y\n0.1\nabc\n")), DataError);
  EXPECT_THROW(io::load_sv("/nonexistent/dir/sv.csv"), io::MissingFile);
  auto d = io::betabin_from_table(io::parse_csv("n,y\n100,3\n250,0\n"));
  EXPECT_EQ(d.n.size(), 2u);
  EXPECT_EQ(d.y[0], 3.0);
}

TEST(Cli, ToyRecoversRateToMachinePrecision) {
  fs::path d = scratch("toy");
  ASSERT_EQ(vbtool("toy-exp --lambda 2 --iters 4 --seed 1 --out " + d.string()), 0);
  auto r = read_json(d / "report.json");
  EXPECT_NEAR(r["result"]["eta"].get<double>(), 2.0, 2e-10);
  EXPECT_EQ(r["result"]["likelihood_evals"].get<long>(), 4);
  EXPECT_EQ(r["config"]["seed"].get<long>(), 1);
  EXPECT_TRUE(r["build"].contains("revision"));
  EXPECT_TRUE(r["fit_report"].contains("r_squared"));
}

TEST(Cli, SameSeedGivesIdenticalBytes) {
  const std::vector<std::pair<std::string, std::string>> runs{
      {"estimators --repeats 6 --iters 300 --seed 3", "estimators.csv"},
      {"probit --repeats 2 --iters 400 --seed 3", "trace.csv"},
      {"betabin --components 2 --iters 300 --seed 3", "kl_vs_components.csv"},
      {"stochvol --iters 30 --seed 3", "trace.csv"}};
  for (const auto& [args, file] : runs) {
    fs::path a = scratch("det_a"), b = scratch("det_b");
    ASSERT_EQ(vbtool(args + " --out " + a.string()), 0) << args;
    ASSERT_EQ(vbtool(args + " --out " + b.string()), 0) << args;
    EXPECT_EQ(io::read_text((a / file).string()), io::read_text((b / file).string())) << args;
    auto ra = read_json(a / "report.json"), rb = read_json(b / "report.json");
    EXPECT_EQ(ra["result"], rb["result"]) << args;
  }
}

TEST(Cli, ExitCodes) {
  fs::path d = scratch("exit");
  const std::string out = " --out " + d.string();
  EXPECT_EQ(vbtool("probit --data /nonexistent/probit.csv" + out), 2);
  EXPECT_EQ(vbtool("toy-exp --iters 1" + out), 3);
  EXPECT_EQ(vbtool("no-such-experiment" + out), 3);
  EXPECT_EQ(vbtool("toy-exp --estimator hessian" + out), 3);
  EXPECT_EQ(vbtool("betabin --components 0" + out), 3);
  EXPECT_EQ(vbtool("toy-exp --not-a-flag 1" + out), 3);
  {
    std::ofstream(d / "bad.csv") << "y,v1\n1,0.3\n2,0.1\n";
  }
  EXPECT_EQ(vbtool("probit --data " + (d / "bad.csv").string() + out), 3);
  // The budget stops the run before the averaging window opens.
  EXPECT_EQ(vbtool("toy-exp --iters 1000 --likelihood-eval-budget 10" + out), 4);
}

TEST(Cli, ConfigFileFlagsWin) {
  fs::path d = scratch("config");
  {
    std::ofstream(d / "c.json") << R"({"experiment": "toy-exp", "lambda": 3.0, "iters": 8, "seed": 5})";
  }
  ASSERT_EQ(vbtool("--config " + (d / "c.json").string() + " --lambda 1.5 --out " + d.string()), 0);
  auto r = read_json(d / "report.json");
  EXPECT_EQ(r["config"]["iters"].get<long>(), 8);
  EXPECT_EQ(r["config"]["lambda"].get<double>(), 1.5);
  EXPECT_NEAR(r["result"]["eta"].get<double>(), 1.5, 1e-9);
  {
    std::ofstream(d / "bad.json") << R"({"experiment": "toy-exp", "iterz": 8})";
  }
  EXPECT_EQ(vbtool("--config " + (d / "bad.json").string() + " --out " + d.string()), 3);
}

TEST(Cli, BudgetCapsEvaluations) {
  fs::path d = scratch("budget");
  ASSERT_EQ(vbtool("probit --iters 1000 --likelihood-eval-budget 600 --seed 2 --out " + d.string()), 0);
  auto ev = read_json(d / "report.json")["result"]["datasets"][0]["likelihood_evals"];
  EXPECT_EQ(ev["hessian"].get<double>(), 600.0);
  EXPECT_EQ(ev["basic"].get<double>(), 600.0);
  EXPECT_LE(ev["factorized"].get<double>(), 600.0);
}

// Long-format trace: fixed leading columns, one numeric value per cell,
// iterations increasing within each series.
TEST(Cli, TraceColumnContract) {
  fs::path d = scratch("trace");
  ASSERT_EQ(vbtool("probit --repeats 2 --iters 300 --seed 4 --out " + d.string()), 0);
  io::Table t = io::read_csv((d / "trace.csv").string());
  ASSERT_EQ(t.header, (std::vector<std::string>{"iteration", "likelihood_evals", "rmse", "method", "dataset"}));
  ASSERT_FALSE(t.rows.empty());
  std::map<std::pair<std::string, std::string>, double> last;
  for (const auto& r : t.rows) {
    const double it = io::parse_double(r[0]);
    EXPECT_GE(io::parse_double(r[1]), 0.0);
    EXPECT_TRUE(std::isfinite(io::parse_double(r[2])));
    auto key = std::make_pair(r[3], r[4]);
    if (last.count(key)) EXPECT_GT(it, last[key]);
    last[key] = it;
  }
  EXPECT_EQ(last.size(), 8u);

  ASSERT_EQ(vbtool("stochvol --iters 40 --seed 4 --out " + d.string()), 0);
  io::Table s = io::read_csv((d / "trace.csv").string());
  ASSERT_GE(s.header.size(), 3u);
  EXPECT_EQ(s.header[0], "iteration");
  EXPECT_EQ(s.header[1], "likelihood_evals");
  EXPECT_EQ(s.rows.size(), 40u);
  for (const auto& r : s.rows)
    for (const auto& cell : r) EXPECT_NO_THROW(io::parse_double(cell));
}
