#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "sacbf/harness.hpp"
#include "sacbf/sampling.hpp"

using namespace sacbf;

namespace {
VectorXd vec2(double a, double b) {
  VectorXd v(2);
  v << a, b;
  return v;
}

MatrixXd dint_starts(const SacbfBundle* bundle, int n, uint64_t seed) {
  auto [sys, cs] = make_double_integrator();
  Rng rng(seed);
  MatrixXd x0(2, n);
  int got = 0;
  while (got < n) {
    VectorXd x = rng.uniform_vector(cs.domain_lo, cs.domain_hi);
    if (bundle && !bundle->safe_set_test(x)) continue;
    x0.col(got++) = x;
  }
  return x0;
}
}  // namespace

TEST_CASE("evaluate") {
  auto [sys, cs] = make_double_integrator();

  SUBCASE("an always-infeasible filter scores zero safety") {
    SacbfBundle closed = make_function_bundle(
        [](const VectorXd&, const VectorXd&) { return 1.0; },
        sample_input_grid(cs, {3}));
    FilterConfig cfg = FilterConfig::for_constraints(cs);
    FilterPolicy pol = make_policy(
        closed, FilterObjective::distance_to(
                    [](const VectorXd&) { return VectorXd(VectorXd::Zero(1)); }),
        cfg);
    std::vector<PolicyUnderTest> policies{{"closed", pol.as_policy(), pol.stats()}};
    MatrixXd x0 = dint_starts(nullptr, 10, 3);
    EvalReport report = evaluate(policies, sys, cs, x0, 20, 3, position_cost(1));
    REQUIRE(report.rows.size() == 1);
    CHECK(report.rows[0].safety_rate == 0.0);
    CHECK(report.rows[0].infeasibility_events == 10 * 20);
  }

  SUBCASE("a braking policy from the interior is fully safe") {
    Policy brake = [](const VectorXd& x) {
      return VectorXd(
          VectorXd::Constant(1, std::clamp(-1.2 * x(0) - 1.8 * x(1), -1.0, 1.0)));
    };
    std::vector<PolicyUnderTest> policies{{"lqr", brake, nullptr}};
    Rng rng(5);
    MatrixXd x0(2, 12);
    for (int i = 0; i < 12; ++i)
      x0.col(i) = vec2(rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4));
    EvalReport report = evaluate(policies, sys, cs, x0, 100, 5, position_cost(1));
    CHECK(report.rows[0].safety_rate == 100.0);
    CHECK(report.rows[0].reached_target == 12);
    CHECK(report.rows[0].total_cost > 0.0);
    CHECK(report.rows[0].mean_cpu_ms >= 0.0);
  }

  SUBCASE("metrics reproduce across runs, cpu time aside") {
    Policy coast = [](const VectorXd&) { return VectorXd(VectorXd::Zero(1)); };
    std::vector<PolicyUnderTest> a{{"coast", coast, nullptr}};
    std::vector<PolicyUnderTest> b{{"coast", coast, nullptr}};
    MatrixXd x0 = dint_starts(nullptr, 8, 11);
    EvalReport ra = evaluate(a, sys, cs, x0, 30, 11, position_cost(1), "cfg-x");
    EvalReport rb = evaluate(b, sys, cs, x0, 30, 11, position_cost(1), "cfg-x");
    CHECK(ra.rows[0].safety_rate == rb.rows[0].safety_rate);
    CHECK(ra.rows[0].total_cost == rb.rows[0].total_cost);
    CHECK(ra.config_hash == rb.config_hash);
    CHECK(!ra.config_hash.empty());
  }

  SUBCASE("report files") {
    Policy coast = [](const VectorXd&) { return VectorXd(VectorXd::Zero(1)); };
    std::vector<PolicyUnderTest> p{{"coast", coast, nullptr}};
    MatrixXd x0 = dint_starts(nullptr, 4, 2);
    EvalReport report = evaluate(p, sys, cs, x0, 10, 2, position_cost(1));
    report.save_json("eval_test.json");
    report.save_csv("eval_test.csv");
    std::ifstream in("eval_test.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header ==
          "policy,safety_rate,total_cost,mean_cpu_ms,trials,"
          "infeasibility_events,reached_target");
    std::filesystem::remove("eval_test.json");
    std::filesystem::remove("eval_test.csv");
  }
}

TEST_CASE("level-set slice export") {
  SUBCASE("a constant field exports a constant column") {
    auto field = [](const VectorXd&) { return 0.75; };
    VectorXd pinned = VectorXd::Zero(4);
    VectorXd lo = VectorXd::Constant(4, -1), hi = VectorXd::Constant(4, 1);
    export_levelset_slice(field, pinned, 0, 1, lo, hi, 5, "slice_test.csv");
    std::ifstream in("slice_test.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "a,b,value");
    int rows = 0;
    while (std::getline(in, line)) {
      ++rows;
      CHECK(line.substr(line.rfind(',') + 1) == "0.75");
    }
    CHECK(rows == 25);
    std::filesystem::remove("slice_test.csv");
  }

  SUBCASE("pinned coordinates stay fixed") {
    // field returns the pinned coordinate so any drift would show up
    auto field = [](const VectorXd& x) { return x(2); };
    VectorXd pinned = VectorXd::Zero(4);
    pinned(2) = 0.5;
    VectorXd lo = VectorXd::Constant(4, -1), hi = VectorXd::Constant(4, 1);
    export_levelset_slice(field, pinned, 0, 1, lo, hi, 3, "slice_test2.csv");
    std::ifstream in("slice_test2.csv");
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line))
      CHECK(line.substr(line.rfind(',') + 1) == "0.5");
    std::filesystem::remove("slice_test2.csv");
  }
}

TEST_CASE("beta sweep export") {
  std::vector<BetaSweepRow> rows(2);
  rows[0] = {0.0, 0.01, 0.02, 100, 40, 0.4};
  rows[1] = {0.2, 0.02, 0.05, 100, 35, 0.35};
  export_beta_sweep(rows, "beta_test.csv");
  std::ifstream in("beta_test.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "beta,epsilon,safe_level,slice_nodes,safe_nodes,safe_area");
  int n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  CHECK(n == 2);
  std::filesystem::remove("beta_test.csv");
}
