#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "banditpert/harness.hpp"
#include "banditpert/scenario.hpp"

using namespace banditpert;

namespace {

Scenario small_scenario() {
  Scenario s;
  s.name = "unit";
  s.num_arms = 3;
  s.dim = 300;
  s.horizon = 40;
  s.attack = AttackKind::osa;
  s.seeds = {0, 1, 2, 3};
  return s;
}

}  // namespace

TEST_CASE("config parsing round trip") {
  const std::string text = R"(
# comparison scenario
name = fig1_osa
[suite]
K = 5
d = 2000
T = 80
[reward]
kind = mlp_random
widths = 64, 32
attack_layer = 1
[attack]
kind = osa
[algo]
algorithm = ucb
[defense]
fraction = 0.25
[seeds]
range = 3..7
)";
  std::istringstream is(text);
  const auto cfg = config_from_map(parse_config_text(is));
  const Scenario& s = cfg.scenario;
  CHECK(s.name == "fig1_osa");
  CHECK(s.num_arms == 5);
  CHECK(s.dim == 2000);
  CHECK(s.horizon == 80);
  CHECK(s.reward == RewardKind::mlp_random);
  CHECK(s.hidden_widths == std::vector<int>{64, 32});
  CHECK(s.attack_layer == 1);
  CHECK(s.defense_fraction == 0.25);
  CHECK(s.seeds == std::vector<std::uint64_t>{3, 4, 5, 6, 7});
  CHECK(!cfg.sweep.has_value());
}

TEST_CASE("config rejects unknown keys and malformed input") {
  {
    std::istringstream is("name = x\n[suite]\nQ = 3\n");
    CHECK_THROWS_AS(config_from_map(parse_config_text(is)),
                    std::invalid_argument);
  }
  {
    std::istringstream is("just a line without equals\n");
    CHECK_THROWS_AS(parse_config_text(is), std::invalid_argument);
  }
  {
    std::istringstream is("[sweep]\naxis = dimension\n");  // grid missing
    CHECK_THROWS_AS(config_from_map(parse_config_text(is)),
                    std::invalid_argument);
  }
  {
    std::istringstream is(
        "[attack]\nkind = full_trajectory\n[algo]\nalgorithm = etc\n");
    CHECK_THROWS_AS(config_from_map(parse_config_text(is)),
                    std::invalid_argument);
  }
}

TEST_CASE("sweep section parses") {
  std::istringstream is(
      "name = dims\n[sweep]\naxis = dimension\ngrid = 500, 1000, 2000\n");
  const auto cfg = config_from_map(parse_config_text(is));
  REQUIRE(cfg.sweep.has_value());
  CHECK(cfg.sweep->axis == SweepAxis::dimension);
  CHECK(cfg.sweep->grid == std::vector<double>{500, 1000, 2000});
}

TEST_CASE("seed range forms") {
  CHECK(parse_seed_range("0..3") == std::vector<std::uint64_t>{0, 1, 2, 3});
  CHECK(parse_seed_range("7") == std::vector<std::uint64_t>{7});
  CHECK(parse_seed_range("2, 9, 4") == std::vector<std::uint64_t>{2, 9, 4});
  CHECK_THROWS_AS(parse_seed_range("9..2"), std::invalid_argument);
}

TEST_CASE("metrics csv round trip is exact") {
  std::vector<MetricsRow> rows(3);
  rows[0] = {"fig1/d=1000", 17, 0.97938144329896903, false, 0.03330078125,
             0.0017, 42, "optimal", 1.25e-3};
  rows[1] = {"fig1/d=1000", 18, 1.0, true, 1e-300, 0.0, 0, "infeasible", 0.0};
  rows[2] = {"x",           0,  0.3333333333333333,  false, 0.1,
             0.2,           7,  "error: log exhausted; arm 2", 3.7};
  const auto parsed = parse_metrics_csv(metrics_to_csv(rows));
  REQUIRE(parsed.size() == 3);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(parsed[i].scenario == rows[i].scenario);
    CHECK(parsed[i].seed == rows[i].seed);
    CHECK(parsed[i].asr == rows[i].asr);
    CHECK(parsed[i].success == rows[i].success);
    CHECK(parsed[i].delta_l2 == rows[i].delta_l2);
    CHECK(parsed[i].delta_linf == rows[i].delta_linf);
    CHECK(parsed[i].constraints == rows[i].constraints);
    CHECK(parsed[i].wall_seconds == rows[i].wall_seconds);
  }
  CHECK(parsed[2].status == "error: log exhausted; arm 2");
}

TEST_CASE("run_one is deterministic per seed") {
  const Scenario s = small_scenario();
  const MetricsRow a = run_one(s, 1);
  const MetricsRow b = run_one(s, 1);
  CHECK(a.asr == b.asr);
  CHECK(a.delta_l2 == b.delta_l2);
  CHECK(a.delta_linf == b.delta_linf);
  CHECK(a.constraints == b.constraints);
  CHECK(a.status == b.status);
}

TEST_CASE("parallel execution matches sequential") {
  const Scenario s = small_scenario();
  auto seq = run_scenario(s, 1);
  auto par = run_scenario(s, 4);
  REQUIRE(seq.size() == par.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    CHECK(seq[i].seed == par[i].seed);
    CHECK(seq[i].asr == par[i].asr);
    CHECK(seq[i].delta_l2 == par[i].delta_l2);
    CHECK(seq[i].constraints == par[i].constraints);
  }
}

TEST_CASE("osa replay succeeds on the small scenario") {
  const auto rows = run_scenario(small_scenario(), 2);
  for (const auto& r : rows) {
    CHECK(r.status == "optimal");
    CHECK(r.success);
    CHECK(r.asr == 1.0);
    CHECK(r.delta_l2 > 0.0);
  }
}

TEST_CASE("errors are recorded per row, not thrown") {
  Scenario s = small_scenario();
  s.n_per_arm = 5;  // exhausts the log mid-run
  const auto rows = run_scenario(s, 1);
  for (const auto& r : rows) {
    CHECK(r.status.rfind("error:", 0) == 0);
    CHECK_FALSE(r.success);
  }
}

TEST_CASE("summary statistics") {
  std::vector<MetricsRow> rows(4);
  for (int i = 0; i < 4; ++i) {
    rows[i].scenario = "s";
    rows[i].seed = i;
    rows[i].asr = 0.25 * (i + 1);
    rows[i].success = i == 3;
    rows[i].delta_l2 = 1.0;
    rows[i].wall_seconds = i;
    rows[i].status = i % 2 ? "optimal" : "infeasible";
  }
  const auto s = summarize(rows);
  CHECK(s.n == 4);
  CHECK(s.mean_asr == doctest::Approx(0.625));
  CHECK(s.success_fraction == doctest::Approx(0.25));
  CHECK(s.statuses.at("optimal") == 2);
  CHECK(s.statuses.at("infeasible") == 2);
  CHECK(s.median_wall == 2.0);
}

TEST_CASE("least squares fit recovers a known line") {
  const std::vector<double> xs{1, 2, 3, 4};
  const std::vector<double> ys{3.0, 5.0, 7.0, 9.0};
  const auto fit = least_squares_fit(xs, ys);
  CHECK(fit.slope == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(fit.intercept == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(fit.r2 == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("defense sweep at fraction zero changes nothing") {
  Scenario base = small_scenario();
  base.seeds = {0, 1};
  const auto undefended = run_scenario(base, 1);
  const auto swept = sweep(SweepAxis::defense_fraction, {0.0}, base, 1);
  REQUIRE(swept.points.size() == 1);
  for (std::size_t i = 0; i < undefended.size(); ++i) {
    CHECK(swept.points[0].rows[i].asr == undefended[i].asr);
    CHECK(swept.points[0].rows[i].delta_l2 == undefended[i].delta_l2);
  }
}

TEST_CASE("feasibility probe trivial and transition cases") {
  // T = K leaves no attackable rounds: zero constraints, always feasible.
  const auto trivial = feasibility_probe(2, 2, {5}, make_seed_list(10), 2);
  REQUIRE(trivial.size() == 1);
  CHECK(trivial[0].feasible_fraction == 1.0);

  // d far above the threshold (T-K)(K-1): always feasible. d = 2: rarely.
  const auto probe = feasibility_probe(3, 20, {2, 84}, make_seed_list(20), 2);
  CHECK(probe[1].feasible_fraction == 1.0);
  CHECK(probe[0].feasible_fraction < 1.0);
  const auto j = feasibility_json(3, 20, probe);
  CHECK(j.at("threshold_dim").get<int>() == 34);
}

TEST_CASE("sweep summary emits dimension fits") {
  Scenario base = small_scenario();
  base.seeds = {0, 1, 2};
  base.attack = AttackKind::trajectory_free;
  const auto result = sweep(SweepAxis::dimension, {200, 400}, base, 2);
  const auto j = sweep_summary_json(result);
  CHECK(j.at("axis") == "dimension");
  CHECK(j.contains("log_l2_vs_log_dim"));
  CHECK(j.at("points").size() == 2);
}
