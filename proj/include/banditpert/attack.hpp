#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "banditpert/bandit.hpp"
#include "banditpert/common.hpp"
#include "banditpert/data.hpp"
#include "banditpert/qp.hpp"
#include "banditpert/reward.hpp"

namespace banditpert {

// One affine constraint delta^T normal > offset, tagged with the round and
// the arm it forces below the promoted arm.
struct Constraint {
  Eigen::VectorXd normal;  // T vector, free-parameter space
  double offset = 0.0;     // R scalar
  int round = 0;
  int competitor = -1;
};

struct ConstraintSet {
  int dim = 0;
  std::vector<Constraint> items;

  void add(Constraint c) {
    if (c.normal.size() != dim)
      throw std::invalid_argument("constraint dimension mismatch");
    items.push_back(std::move(c));
  }
  int size() const { return static_cast<int>(items.size()); }
};

struct TargetTrajectory {
  std::vector<int> arms;  // 0-based arm per round

  void validate(int num_arms) const {
    const int t_max = static_cast<int>(arms.size());
    if (t_max < num_arms)
      throw std::invalid_argument("target trajectory shorter than warm-up");
    for (int t = 0; t < num_arms; ++t)
      if (arms[t] != t)
        throw std::invalid_argument(
            "target trajectory must pull each arm once during warm-up");
    for (int a : arms)
      if (a < 0 || a >= num_arms)
        throw std::invalid_argument("target trajectory arm out of range");
  }
};

// Warm-up, then cycle over the suboptimal arms in ascending order.
inline TargetTrajectory round_robin_trajectory(int num_arms, int horizon,
                                               int optimal_arm) {
  if (num_arms < 2) throw std::invalid_argument("round_robin: need K >= 2");
  std::vector<int> cycle;
  for (int i = 0; i < num_arms; ++i)
    if (i != optimal_arm) cycle.push_back(i);
  TargetTrajectory target;
  target.arms.resize(horizon);
  for (int t = 0; t < std::min(num_arms, horizon); ++t) target.arms[t] = t;
  for (int t = num_arms; t < horizon; ++t)
    target.arms[t] = cycle[(t - num_arms) % cycle.size()];
  return target;
}

// T = mean_target - mean_competitor, R = -w^T T + sqrt(2 ln t) * gap, so that
// delta^T T > R is exactly "perturbed UCB score of target exceeds
// competitor's" for the linear reward.
inline Constraint build_constraint_linear(
    const Eigen::VectorXd& weight, const Eigen::VectorXd& mean_target,
    long count_target, const Eigen::VectorXd& mean_competitor,
    long count_competitor, int round, bool with_exploration = true) {
  if (count_target < 1 || count_competitor < 1)
    throw std::domain_error("build_constraint: zero pull count");
  Constraint c;
  c.normal = mean_target - mean_competitor;
  double gap = 0.0;
  if (with_exploration) {
    if (round < 2) throw std::domain_error("build_constraint: round must be >= 2");
    gap = std::sqrt(2.0 * std::log(static_cast<double>(round))) *
          (1.0 / std::sqrt(static_cast<double>(count_competitor)) -
           1.0 / std::sqrt(static_cast<double>(count_target)));
  }
  c.offset = -weight.dot(c.normal) + gap;
  c.round = round;
  c.competitor = -1;
  return c;
}

// NTK version: running mean gradients stand in for sample means, running
// mean outputs for w^T S. Exact for models affine in their parameters.
inline Constraint build_constraint_ntk(
    const Eigen::VectorXd& grad_mean_target, double out_mean_target,
    long count_target, const Eigen::VectorXd& grad_mean_competitor,
    double out_mean_competitor, long count_competitor, int round,
    bool with_exploration = true) {
  if (count_target < 1 || count_competitor < 1)
    throw std::domain_error("build_constraint: zero pull count");
  Constraint c;
  c.normal = grad_mean_target - grad_mean_competitor;
  double gap = 0.0;
  if (with_exploration) {
    if (round < 2) throw std::domain_error("build_constraint: round must be >= 2");
    gap = std::sqrt(2.0 * std::log(static_cast<double>(round))) *
          (1.0 / std::sqrt(static_cast<double>(count_competitor)) -
           1.0 / std::sqrt(static_cast<double>(count_target)));
  }
  c.offset = -(out_mean_target - out_mean_competitor) + gap;
  c.round = round;
  c.competitor = -1;
  return c;
}

// Adversary-side running state for the linear reward: per-arm sample means
// double as tangent embeddings, w^T S as base outputs.
class LinearAttackState {
 public:
  LinearAttackState(const ArmSuite& suite, const LoggedDataset& data)
      : weight_(&suite.weight),
        data_(&data),
        next_(data.num_arms(), 0),
        count_(data.num_arms(), 0),
        mean_(data.num_arms(), Eigen::VectorXd::Zero(data.dim())),
        base_(data.num_arms(), 0.0) {}

  int free_dim() const { return data_->dim(); }
  int num_arms() const { return data_->num_arms(); }
  long count(int arm) const { return count_.at(arm); }
  const Eigen::VectorXd& embedding(int arm) const { return mean_.at(arm); }
  double base_mean(int arm) const { return base_.at(arm); }

  void consume(int arm) {
    if (next_[arm] >= data_->samples(arm))
      throw std::runtime_error("attack: log exhausted for arm " +
                               std::to_string(arm));
    const Eigen::VectorXd x = data_->arms[arm].row(next_[arm]).transpose();
    ++next_[arm];
    ++count_[arm];
    mean_[arm] += (x - mean_[arm]) / static_cast<double>(count_[arm]);
    base_[arm] = weight_->dot(mean_[arm]);
  }

  void reset() {
    std::fill(next_.begin(), next_.end(), 0);
    std::fill(count_.begin(), count_.end(), 0);
    for (auto& m : mean_) m.setZero();
    std::fill(base_.begin(), base_.end(), 0.0);
  }

  double perturbed_mean(int arm, const Eigen::VectorXd& delta) const {
    return base_[arm] + mean_[arm].dot(delta);
  }

  Constraint score_constraint(int round, int target, int competitor,
                              bool with_exploration) const {
    if (target == competitor)
      throw std::invalid_argument("constraint: target equals competitor");
    Constraint c = build_constraint_linear(
        *weight_, mean_[target], count_[target], mean_[competitor],
        count_[competitor], round, with_exploration);
    c.competitor = competitor;
    return c;
  }

 private:
  const Eigen::VectorXd* weight_;
  const LoggedDataset* data_;
  std::vector<int> next_;
  std::vector<long> count_;
  std::vector<Eigen::VectorXd> mean_;
  std::vector<double> base_;
};

// NTK state for network rewards: running per-arm mean gradients (in the
// attackable subspace) and mean base outputs; scores are linearized in
// delta.
class NtkAttackState {
 public:
  NtkAttackState(const MlpReward& model, const LoggedDataset& data)
      : model_(&model),
        data_(&data),
        next_(data.num_arms(), 0),
        count_(data.num_arms(), 0),
        grad_mean_(data.num_arms(),
                   Eigen::VectorXd::Zero(model.free_param_count())),
        out_mean_(data.num_arms(), 0.0) {}

  int free_dim() const { return model_->free_param_count(); }
  int num_arms() const { return data_->num_arms(); }
  long count(int arm) const { return count_.at(arm); }
  const Eigen::VectorXd& embedding(int arm) const { return grad_mean_.at(arm); }
  double base_mean(int arm) const { return out_mean_.at(arm); }

  void consume(int arm) {
    if (next_[arm] >= data_->samples(arm))
      throw std::runtime_error("attack: log exhausted for arm " +
                               std::to_string(arm));
    const Eigen::VectorXd x = data_->arms[arm].row(next_[arm]).transpose();
    ++next_[arm];
    ++count_[arm];
    const double n = static_cast<double>(count_[arm]);
    grad_mean_[arm] += (model_->masked_gradient(x) - grad_mean_[arm]) / n;
    out_mean_[arm] += (model_->value(x) - out_mean_[arm]) / n;
  }

  void reset() {
    std::fill(next_.begin(), next_.end(), 0);
    std::fill(count_.begin(), count_.end(), 0);
    for (auto& g : grad_mean_) g.setZero();
    std::fill(out_mean_.begin(), out_mean_.end(), 0.0);
  }

  double perturbed_mean(int arm, const Eigen::VectorXd& delta) const {
    return out_mean_[arm] + grad_mean_[arm].dot(delta);
  }

  Constraint score_constraint(int round, int target, int competitor,
                              bool with_exploration) const {
    if (target == competitor)
      throw std::invalid_argument("constraint: target equals competitor");
    Constraint c = build_constraint_ntk(
        grad_mean_[target], out_mean_[target], count_[target],
        grad_mean_[competitor], out_mean_[competitor], count_[competitor],
        round, with_exploration);
    c.competitor = competitor;
    return c;
  }

 private:
  const MlpReward* model_;
  const LoggedDataset* data_;
  std::vector<int> next_;
  std::vector<long> count_;
  std::vector<Eigen::VectorXd> grad_mean_;
  std::vector<double> out_mean_;
};

struct AttackOptions {
  double margin = 1e-6;       // strict inequalities become >= offset + margin
  QpTolerances qp;
  bool per_round_solve = false;  // re-solve after every round's constraints
  // Extra headroom per online-attack constraint. An exact-margin suppression
  // of the optimal arm decays within a few rounds (its lone warm-up score
  // grows like sqrt(2 ln t) while boosted running means regress), which would
  // force a re-trigger almost every round. Overshooting by a constant keeps
  // each intervention effective over a geometrically growing stretch, so the
  // trigger count stays logarithmic in the horizon.
  double osa_trigger_overshoot = 0.3;
};

struct AttackResult {
  Perturbation delta;
  double l2 = 0.0;
  double linf = 0.0;
  int constraint_count = 0;
  QpStatus status = QpStatus::optimal;
  double wall_seconds = 0.0;
  std::vector<int> constraint_rounds;
  double min_margin = std::numeric_limits<double>::infinity();
  bool feasibility_warning = false;  // free dim <= constraint count
};

namespace detail {

class AttackTimer {
 public:
  AttackTimer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

inline void finalize(AttackResult& result, const ConstraintSet& constraints,
                     const QpSolution& sol, const AttackTimer& timer) {
  result.delta.values = sol.delta;
  result.l2 = result.delta.l2();
  result.linf = result.delta.linf();
  result.constraint_count = constraints.size();
  result.status = sol.status;
  result.min_margin = std::numeric_limits<double>::infinity();
  for (const auto& c : constraints.items)
    result.min_margin = std::min(result.min_margin,
                                 sol.delta.dot(c.normal) - c.offset);
  result.feasibility_warning = constraints.size() >= constraints.dim;
  result.wall_seconds = timer.seconds();
}

template <typename ScoreFn>
int argmax_arm(int num_arms, ScoreFn&& score) {
  int best = 0;
  double best_score = score(0);
  for (int i = 1; i < num_arms; ++i) {
    const double s = score(i);
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  return best;
}

template <typename ScoreFn>
int argmax_arm_excluding(int num_arms, int excluded, ScoreFn&& score) {
  int best = -1;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < num_arms; ++i) {
    if (i == excluded) continue;
    const double s = score(i);
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  return best;
}

}  // namespace detail

// Forces the bandit through a prescribed trajectory: at every post-warm-up
// round the target arm must beat all K-1 others, (T-K)(K-1) constraints in
// total. State evolves along the forced trajectory, so the constraint set
// does not depend on intermediate solutions and a single final solve equals
// the literal per-round re-solve.
template <typename State>
AttackResult full_trajectory_attack(State& state,
                                    const TargetTrajectory& target,
                                    const AttackOptions& opt = {}) {
  const detail::AttackTimer timer;
  const int k = state.num_arms();
  const int t_max = static_cast<int>(target.arms.size());
  target.validate(k);

  ConstraintSet constraints{state.free_dim(), {}};
  MinNormSolver solver(state.free_dim());
  QpSolution sol;
  sol.delta = Eigen::VectorXd::Zero(state.free_dim());
  sol.status = QpStatus::optimal;
  AttackResult result;

  for (int t = 1; t <= t_max; ++t) {
    const int arm = target.arms[t - 1];
    if (t > k) {
      for (int j = 0; j < k; ++j) {
        if (j == arm) continue;
        Constraint c = state.score_constraint(t, arm, j, true);
        solver.add_constraint(c.normal, c.offset + opt.margin);
        constraints.add(std::move(c));
      }
      result.constraint_rounds.push_back(t);
      if (opt.per_round_solve) {
        sol = solver.solve(opt.qp);
        if (sol.status != QpStatus::optimal) break;
      }
    }
    state.consume(arm);
  }
  if (!opt.per_round_solve) sol = solver.solve(opt.qp);

  detail::finalize(result, constraints, sol, timer);
  return result;
}

// Only prevents the optimal arm from being selected: one constraint per
// round, the round-robin auxiliary arm beats the optimal arm.
template <typename State>
AttackResult trajectory_free_attack(State& state, int optimal_arm, int horizon,
                                    const AttackOptions& opt = {}) {
  const detail::AttackTimer timer;
  const int k = state.num_arms();
  if (optimal_arm < 0 || optimal_arm >= k)
    throw std::invalid_argument("trajectory_free_attack: bad optimal arm");
  const TargetTrajectory aux = round_robin_trajectory(k, horizon, optimal_arm);

  ConstraintSet constraints{state.free_dim(), {}};
  MinNormSolver solver(state.free_dim());
  QpSolution sol;
  sol.delta = Eigen::VectorXd::Zero(state.free_dim());
  sol.status = QpStatus::optimal;
  AttackResult result;

  for (int t = 1; t <= horizon; ++t) {
    const int arm = aux.arms[t - 1];
    if (t > k) {
      Constraint c = state.score_constraint(t, arm, optimal_arm, true);
      solver.add_constraint(c.normal, c.offset + opt.margin);
      constraints.add(std::move(c));
      result.constraint_rounds.push_back(t);
      if (opt.per_round_solve) {
        sol = solver.solve(opt.qp);
        if (sol.status != QpStatus::optimal) break;
      }
    }
    state.consume(arm);
  }
  if (!opt.per_round_solve) sol = solver.solve(opt.qp);

  detail::finalize(result, constraints, sol, timer);
  return result;
}

// Online score-aware attack. Simulates the bandit under the evolving
// perturbation; whenever the optimal arm would win, the runner-up is forced
// above it and the QP re-solved with the previous duals as warm start. The
// simulation then follows the argmax under the fresh solution, which the new
// constraint guarantees is not the optimal arm.
//
// Because the final delta must suppress the optimal arm along the trajectory
// it itself induces, the simulation repeats from the top (keeping all
// accumulated constraints) until one full pass adds nothing. At that point
// replaying the bandit under the final delta cannot select the optimal arm at
// any post-warm-up decision. One pass almost always suffices; two are rare.
template <typename State>
AttackResult osa_attack(State& state, int optimal_arm, const AlgoConfig& cfg,
                        const AttackOptions& opt = {}) {
  const detail::AttackTimer timer;
  const int k = state.num_arms();
  if (optimal_arm < 0 || optimal_arm >= k)
    throw std::invalid_argument("osa_attack: bad optimal arm");
  cfg.validate(k);
  const int t_max = cfg.horizon;

  ConstraintSet constraints{state.free_dim(), {}};
  MinNormSolver solver(state.free_dim());
  Eigen::VectorXd delta = Eigen::VectorXd::Zero(state.free_dim());
  QpSolution sol;
  sol.delta = delta;
  sol.status = QpStatus::optimal;
  AttackResult result;
  bool solver_failed = false;
  bool added_this_pass = false;

  // Adds the runner-up > optimal constraint for round t and re-solves.
  // Returns false when the solver cannot certify an optimum.
  auto attack_round = [&](int t, bool with_exploration, auto&& score) -> bool {
    const int runner = detail::argmax_arm_excluding(k, optimal_arm, score);
    Constraint c =
        state.score_constraint(t, runner, optimal_arm, with_exploration);
    solver.add_constraint(c.normal,
                          c.offset + opt.margin + opt.osa_trigger_overshoot);
    constraints.add(std::move(c));
    result.constraint_rounds.push_back(t);
    added_this_pass = true;
    sol = solver.solve(opt.qp);
    if (sol.status != QpStatus::optimal) {
      solver_failed = true;
      return false;
    }
    delta = sol.delta;
    return true;
  };

  const int max_passes = 25;
  for (int pass = 0; pass < max_passes && !solver_failed; ++pass) {
    state.reset();
    added_this_pass = false;
    switch (cfg.algorithm) {
      case Algorithm::ucb: {
        for (int t = 1; t <= std::min(k, t_max); ++t) state.consume(t - 1);
        for (int t = k + 1; t <= t_max && !solver_failed; ++t) {
          auto score = [&](int i) {
            return state.perturbed_mean(i, delta) +
                   std::sqrt(2.0 * std::log(static_cast<double>(t)) /
                             static_cast<double>(state.count(i)));
          };
          int arm = detail::argmax_arm(k, score);
          if (arm == optimal_arm) {
            if (!attack_round(t, true, score)) break;
            arm = detail::argmax_arm(k, score);
          }
          state.consume(arm);
        }
        break;
      }
      case Algorithm::etc: {
        const int explore_rounds = cfg.etc_exploration * k;
        for (int t = 1; t <= std::min(explore_rounds, t_max); ++t)
          state.consume((t - 1) % k);
        if (t_max > explore_rounds) {
          auto score = [&](int i) { return state.perturbed_mean(i, delta); };
          if (detail::argmax_arm(k, score) == optimal_arm)
            attack_round(explore_rounds + 1, false, score);
        }
        break;
      }
      case Algorithm::eps_greedy: {
        // Mirrors run_bandit's draw order exactly so the constructed
        // constraints refer to the states the replay will visit.
        auto rng = make_rng(cfg.seed, rng_stream::algorithm);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        std::uniform_int_distribution<int> pick(0, k - 1);
        for (int t = 1; t <= std::min(k, t_max); ++t) state.consume(t - 1);
        for (int t = k + 1; t <= t_max && !solver_failed; ++t) {
          if (unit(rng) < epsilon_schedule(t, cfg)) {
            state.consume(pick(rng));  // random rounds are not attacked
            continue;
          }
          auto score = [&](int i) { return state.perturbed_mean(i, delta); };
          int arm = detail::argmax_arm(k, score);
          if (arm == optimal_arm) {
            if (!attack_round(t, false, score)) break;
            arm = detail::argmax_arm(k, score);
          }
          state.consume(arm);
        }
        break;
      }
    }
    if (!added_this_pass) break;
  }

  detail::finalize(result, constraints, sol, timer);
  return result;
}

// Isotropic direction scaled to an exact l2 norm.
inline Perturbation random_noise_baseline(int free_dim, double l2_target,
                                          std::uint64_t seed) {
  if (free_dim < 1)
    throw std::invalid_argument("random_noise_baseline: bad dimension");
  if (l2_target < 0.0)
    throw std::invalid_argument("random_noise_baseline: negative norm");
  Perturbation p = Perturbation::zero(free_dim);
  if (l2_target == 0.0) return p;
  auto rng = make_rng(seed, rng_stream::noise);
  std::normal_distribution<double> gauss(0.0, 1.0);
  double norm = 0.0;
  while (norm < 1e-12) {
    for (int i = 0; i < free_dim; ++i) p.values(i) = gauss(rng);
    norm = p.values.norm();
  }
  p.values *= l2_target / norm;
  return p;
}

inline nlohmann::json attack_result_to_json(const AttackResult& r) {
  return nlohmann::json{{"l2", r.l2},
                        {"linf", r.linf},
                        {"constraints", r.constraint_count},
                        {"status", to_string(r.status)},
                        {"wall_seconds", r.wall_seconds},
                        {"constraint_rounds", r.constraint_rounds},
                        {"min_margin", r.min_margin},
                        {"feasibility_warning", r.feasibility_warning}};
}

}  // namespace banditpert
