#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <vector>

#include "banditpert/attack.hpp"
#include "banditpert/bandit.hpp"
#include "banditpert/data.hpp"
#include "banditpert/reward.hpp"

using namespace banditpert;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

AlgoConfig ucb_cfg(int horizon) {
  AlgoConfig cfg;
  cfg.algorithm = Algorithm::ucb;
  cfg.horizon = horizon;
  return cfg;
}

// Post-warm-up rounds where the bandit picked the protected arm.
int optimal_pulls_after_warmup(const BanditTrace& trace, int k, int optimal) {
  int n = 0;
  for (int t = k + 1; t <= trace.horizon(); ++t)
    if (trace.pulled[t - 1] == optimal) ++n;
  return n;
}

// A plain affine network carrying the weight vector w, attackable weights
// only: its tangent embedding of x is x itself.
MlpReward affine_model(const VectorXd& w) {
  const std::vector<int> widths{static_cast<int>(w.size()), 1};
  VectorXd theta(w.size() + 1);
  theta.head(w.size()) = w;
  theta(w.size()) = 0.0;
  std::vector<std::uint8_t> mask(w.size(), 1);
  mask.push_back(0);  // freeze the bias
  return MlpReward(widths, theta, std::move(mask));
}

}  // namespace

TEST_CASE("hand-checked linear constraint") {
  // Samples equal to the means, both arms pulled once, t=3: the exploration
  // terms cancel, T = mu_2 - mu_1 = (-1, 1), R = -w^T T = 1.
  const VectorXd w = (VectorXd(2) << 1, 0).finished();
  const VectorXd mu1 = (VectorXd(2) << 1, 0).finished();
  const VectorXd mu2 = (VectorXd(2) << 0, 1).finished();
  const Constraint c = build_constraint_linear(w, mu2, 1, mu1, 1, 3);
  CHECK(c.normal(0) == -1.0);
  CHECK(c.normal(1) == 1.0);
  CHECK(c.offset == 1.0);

  // Minimum-norm perturbation satisfying it sits at (-0.5, 0.5) plus the
  // margin's share.
  QpProblem p;
  p.constraints = c.normal.transpose();
  p.bounds = VectorXd::Constant(1, c.offset + 1e-6);
  const auto sol = solve_min_norm(p);
  REQUIRE(sol.status == QpStatus::optimal);
  CHECK(sol.delta(0) == doctest::Approx(-0.5).epsilon(1e-5));
  CHECK(sol.delta(1) == doctest::Approx(0.5).epsilon(1e-5));
}

TEST_CASE("constraint builder rejects degenerate inputs") {
  const VectorXd v = VectorXd::Ones(3);
  CHECK_THROWS_AS(build_constraint_linear(v, v, 0, v, 1, 5), std::domain_error);
  CHECK_THROWS_AS(build_constraint_linear(v, v, 1, v, 1, 1), std::domain_error);

  const auto suite = make_arm_suite(2, 4, 1);
  const auto data = sample_logged_data(suite, 4, 1);
  LinearAttackState state(suite, data);
  state.consume(0);
  state.consume(1);
  CHECK_THROWS_AS(state.score_constraint(3, 1, 1, true), std::invalid_argument);
}

TEST_CASE("linear constraint is equivalent to the score comparison") {
  // sign(delta^T T - R) must equal sign(Lambda_t(i) - Lambda_t(j)) where the
  // scores are recomputed from scratch over the consumed samples.
  std::mt19937_64 rng(7);
  std::normal_distribution<double> gauss(0.0, 1.0);
  int checked = 0;
  while (checked < 1000) {
    const int k = 2 + static_cast<int>(rng() % 3);
    const int d = k + static_cast<int>(rng() % 8);
    const auto suite = make_arm_suite(k, d, rng());
    const auto data = sample_logged_data(suite, 30, rng());
    LinearAttackState state(suite, data);
    std::vector<std::vector<VectorXd>> consumed(k);
    for (int i = 0; i < k; ++i) {  // warm-up
      state.consume(i);
      consumed[i].push_back(data.arms[i].row(0).transpose());
    }
    const int extra = static_cast<int>(rng() % 20);
    for (int e = 0; e < extra; ++e) {
      const int arm = static_cast<int>(rng() % k);
      consumed[arm].push_back(
          data.arms[arm].row(static_cast<int>(consumed[arm].size())).transpose());
      state.consume(arm);
    }
    const int t = k + 1 + extra;
    const int target = static_cast<int>(rng() % k);
    int comp = static_cast<int>(rng() % k);
    if (comp == target) comp = (comp + 1) % k;

    const Constraint c = state.score_constraint(t, target, comp, true);
    Perturbation delta{VectorXd(d)};
    for (int i = 0; i < d; ++i) delta.values(i) = 0.3 * gauss(rng);

    LinearReward model{suite.weight};
    auto lambda = [&](int arm) {
      double mean = 0.0;
      for (const auto& x : consumed[arm]) mean += eval_reward(model, delta, x);
      mean /= static_cast<double>(consumed[arm].size());
      return ucb_score(mean, static_cast<long>(consumed[arm].size()),
                       static_cast<double>(t));
    };
    const double lhs = delta.values.dot(c.normal) - c.offset;
    const double rhs = lambda(target) - lambda(comp);
    if (std::abs(lhs) < 1e-10 || std::abs(rhs) < 1e-10) continue;  // knife edge
    CHECK((lhs > 0) == (rhs > 0));
    ++checked;
  }
}

TEST_CASE("ntk constraint on an affine model reduces to the linear one") {
  const auto suite = make_arm_suite(3, 5, 2);
  const auto data = sample_logged_data(suite, 10, 2);
  const auto model = affine_model(suite.weight);

  LinearAttackState lin(suite, data);
  NtkAttackState ntk(model, data);
  for (int i = 0; i < 3; ++i) {
    lin.consume(i);
    ntk.consume(i);
  }
  lin.consume(1);
  ntk.consume(1);
  const Constraint cl = lin.score_constraint(5, 1, 0, true);
  const Constraint cn = ntk.score_constraint(5, 1, 0, true);
  CHECK((cl.normal - cn.normal).lpNorm<Eigen::Infinity>() <= 1e-12);
  CHECK(cl.offset == doctest::Approx(cn.offset).epsilon(1e-12));
}

TEST_CASE("ntk constraint at delta = 0 agrees with direct score evaluation") {
  std::mt19937_64 rng(19);
  for (int it = 0; it < 50; ++it) {
    const auto suite = make_arm_suite(3, 6, rng());
    const auto data = sample_logged_data(suite, 12, rng());
    const auto model = random_mlp({6, 24, 1}, rng(), 0);
    NtkAttackState state(model, data);
    for (int i = 0; i < 3; ++i) state.consume(i);
    const int rounds = static_cast<int>(rng() % 6);
    std::vector<std::vector<int>> consumed{{0}, {0}, {0}};
    for (int e = 0; e < rounds; ++e) {
      const int arm = static_cast<int>(rng() % 3);
      consumed[arm].push_back(static_cast<int>(consumed[arm].size()));
      state.consume(arm);
    }
    const int t = 4 + rounds;
    const Constraint c = state.score_constraint(t, 1, 0, true);
    // delta = 0 satisfies the constraint iff arm 1's unperturbed score beats
    // arm 0's, with mean outputs recomputed sample by sample.
    auto score = [&](int arm) {
      double mean = 0.0;
      for (int j : consumed[arm])
        mean += model.value(data.arms[arm].row(j).transpose());
      mean /= static_cast<double>(consumed[arm].size());
      return ucb_score(mean, static_cast<long>(consumed[arm].size()),
                       static_cast<double>(t));
    };
    const double lhs = -c.offset;  // delta^T T - R at delta = 0
    const double rhs = score(1) - score(0);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-9));
  }
}

TEST_CASE("full-trajectory attack replays exactly") {
  for (int seed = 0; seed < 3; ++seed) {
    const auto suite = make_arm_suite(3, 300, seed);
    const auto data = sample_logged_data(suite, 60, seed);
    const auto target = round_robin_trajectory(3, 60, suite.optimal_arm);

    LinearAttackState state(suite, data);
    const auto result = full_trajectory_attack(state, target);
    REQUIRE(result.status == QpStatus::optimal);
    CHECK(result.constraint_count == (60 - 3) * 2);
    CHECK(result.min_margin >= 1e-6 - 1e-8);

    LinearReward model{suite.weight};
    const auto trace = run_bandit(ucb_cfg(60), data, model, result.delta);
    CHECK(trace.pulled == target.arms);
  }
}

TEST_CASE("self-consistent target needs only a margin-sized perturbation") {
  const auto suite = make_arm_suite(3, 100, 11);
  const auto data = sample_logged_data(suite, 50, 11);
  LinearReward model{suite.weight};
  const auto clean =
      run_bandit(ucb_cfg(50), data, model, Perturbation::zero(100));
  TargetTrajectory target{clean.pulled};

  LinearAttackState state(suite, data);
  const auto result = full_trajectory_attack(state, target);
  REQUIRE(result.status == QpStatus::optimal);
  CHECK(result.delta.l2() <= 1e-4);
}

TEST_CASE("per-round re-solves land on the same final perturbation") {
  const auto suite = make_arm_suite(3, 80, 23);
  const auto data = sample_logged_data(suite, 20, 23);
  const auto target = round_robin_trajectory(3, 20, suite.optimal_arm);

  LinearAttackState s1(suite, data);
  const auto batch = full_trajectory_attack(s1, target);
  LinearAttackState s2(suite, data);
  AttackOptions literal;
  literal.per_round_solve = true;
  const auto stepwise = full_trajectory_attack(s2, target, literal);
  REQUIRE(batch.status == QpStatus::optimal);
  REQUIRE(stepwise.status == QpStatus::optimal);
  CHECK((batch.delta.values - stepwise.delta.values).norm() <=
        1e-8 * (1.0 + batch.delta.l2()));
}

TEST_CASE("low dimension makes the full-trajectory problem infeasible") {
  // Way more constraints than dimensions; the suite geometry cannot be
  // orthogonalized with d < K, so build the degenerate-geometry suite by hand.
  std::mt19937_64 rng(3);
  std::normal_distribution<double> gauss(0.0, 1.0);
  int not_optimal = 0;
  const int seeds = 20;
  for (int seed = 0; seed < seeds; ++seed) {
    ArmSuite suite;
    suite.num_arms = 3;
    suite.dim = 2;
    suite.optimal_arm = 0;
    suite.means.resize(3, 2);
    for (int i = 0; i < 3; ++i) {
      VectorXd v(2);
      v << gauss(rng), gauss(rng);
      suite.means.row(i) = v.normalized().transpose();
    }
    suite.weight = suite.means.row(0).transpose();
    const auto data = sample_logged_data(suite, 100, seed);
    const auto target = round_robin_trajectory(3, 100, 0);
    LinearAttackState state(suite, data);
    const auto result = full_trajectory_attack(state, target);
    CHECK(result.feasibility_warning);
    if (result.status != QpStatus::optimal) ++not_optimal;
    if (result.status == QpStatus::infeasible) continue;
  }
  CHECK(not_optimal > seeds / 2);  // infeasible on most seeds
}

TEST_CASE("trajectory-free attack uses T-K constraints and hides the optimal arm") {
  const auto suite = make_arm_suite(3, 1000, 31);
  const auto data = sample_logged_data(suite, 100, 31);
  LinearAttackState state(suite, data);
  const auto result = trajectory_free_attack(state, suite.optimal_arm, 100);
  REQUIRE(result.status == QpStatus::optimal);
  CHECK(result.constraint_count == 97);
  CHECK(result.min_margin >= 1e-6 - 1e-8);

  LinearReward model{suite.weight};
  const auto trace = run_bandit(ucb_cfg(100), data, model, result.delta);
  CHECK(optimal_pulls_after_warmup(trace, 3, suite.optimal_arm) == 0);
}

TEST_CASE("two arms degenerate round robin to the single suboptimal arm") {
  const auto traj = round_robin_trajectory(2, 10, 0);
  for (int t = 2; t < 10; ++t) CHECK(traj.arms[t] == 1);
  CHECK(traj.arms[0] == 0);
  CHECK(traj.arms[1] == 1);
}

TEST_CASE("constraint subset costs no more than the full trajectory") {
  for (int seed = 0; seed < 5; ++seed) {
    const auto suite = make_arm_suite(4, 500, seed);
    const auto data = sample_logged_data(suite, 40, seed);
    const auto aux = round_robin_trajectory(4, 40, suite.optimal_arm);

    LinearAttackState s1(suite, data);
    const auto full = full_trajectory_attack(s1, aux);
    LinearAttackState s2(suite, data);
    const auto free = trajectory_free_attack(s2, suite.optimal_arm, 40);
    REQUIRE(full.status == QpStatus::optimal);
    REQUIRE(free.status == QpStatus::optimal);
    CHECK(free.l2 <= full.l2 + 1e-9);
  }
}

TEST_CASE("osa attack replays with the optimal arm suppressed") {
  for (int seed = 0; seed < 3; ++seed) {
    const auto suite = make_arm_suite(3, 500, seed);
    const auto data = sample_logged_data(suite, 80, seed);
    LinearAttackState state(suite, data);
    const auto result = osa_attack(state, suite.optimal_arm, ucb_cfg(80));
    REQUIRE(result.status == QpStatus::optimal);
    CHECK(result.constraint_count < 80 - 3);
    CHECK(static_cast<int>(result.constraint_rounds.size()) ==
          result.constraint_count);

    LinearReward model{suite.weight};
    const auto trace = run_bandit(ucb_cfg(80), data, model, result.delta);
    CHECK(optimal_pulls_after_warmup(trace, 3, suite.optimal_arm) == 0);
  }
}

TEST_CASE("osa adds nothing when the optimal arm never wins") {
  // The protected arm's rewards sit 10 below the others; its warm-up score
  // never recovers within the horizon.
  LoggedDataset data;
  data.arms.push_back(MatrixXd::Constant(100, 1, -10.0));
  data.arms.push_back(MatrixXd::Constant(100, 1, 1.0));
  data.arms.push_back(MatrixXd::Constant(100, 1, 0.9));
  ArmSuite suite;
  suite.num_arms = 3;
  suite.dim = 1;
  suite.optimal_arm = 0;
  suite.means = MatrixXd::Ones(3, 1);
  suite.weight = VectorXd::Ones(1);

  LinearAttackState state(suite, data);
  const auto result = osa_attack(state, 0, ucb_cfg(100));
  REQUIRE(result.status == QpStatus::optimal);
  CHECK(result.constraint_count == 0);
  CHECK(result.delta.l2() == 0.0);
}

TEST_CASE("noise baseline has the exact requested norm") {
  const auto p = random_noise_baseline(64, 0.731, 5);
  CHECK(std::abs(p.l2() - 0.731) <= 1e-12);
  const auto q = random_noise_baseline(64, 0.731, 5);
  CHECK(p.values == q.values);
  const auto z = random_noise_baseline(8, 0.0, 5);
  CHECK(z.values.norm() == 0.0);
  CHECK_THROWS_AS(random_noise_baseline(0, 1.0, 5), std::invalid_argument);
  CHECK_THROWS_AS(random_noise_baseline(4, -1.0, 5), std::invalid_argument);
}

TEST_CASE("attack result serializes to json") {
  const auto suite = make_arm_suite(3, 200, 2);
  const auto data = sample_logged_data(suite, 30, 2);
  LinearAttackState state(suite, data);
  const auto result = osa_attack(state, suite.optimal_arm, ucb_cfg(30));
  const auto j = attack_result_to_json(result);
  CHECK(j.at("status").get<std::string>() == "optimal");
  CHECK(j.at("constraints").get<int>() == result.constraint_count);
  CHECK(j.at("l2").get<double>() == result.l2);
  CHECK(j.at("constraint_rounds").size() == result.constraint_rounds.size());
}
