#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "banditpert/attack.hpp"
#include "banditpert/bandit.hpp"
#include "banditpert/data.hpp"
#include "banditpert/qp.hpp"
#include "banditpert/reward.hpp"
#include "banditpert/scenario.hpp"
#include "banditpert/train.hpp"

namespace banditpert {

using RewardModel = std::variant<LinearReward, MlpReward>;

namespace detail {

struct PreparedModel {
  RewardModel model;
  int optimal_arm = 0;
  int free_dim = 0;
};

// The arm the deployed reward model actually favors: for a random network
// this is unrelated to the suite's construction, so measure it on the log.
inline int effective_optimal_arm(const MlpReward& model,
                                 const LoggedDataset& data) {
  int best = 0;
  double best_mean = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < data.num_arms(); ++i) {
    double mean = 0.0;
    for (int j = 0; j < data.samples(i); ++j)
      mean += model.value(data.arms[i].row(j).transpose());
    mean /= static_cast<double>(data.samples(i));
    if (mean > best_mean) {
      best_mean = mean;
      best = i;
    }
  }
  return best;
}

inline PreparedModel prepare_model(const Scenario& s, const ArmSuite& suite,
                                   const LoggedDataset& data,
                                   std::uint64_t seed) {
  PreparedModel out;
  switch (s.reward) {
    case RewardKind::linear: {
      out.model = LinearReward{suite.weight};
      out.optimal_arm = suite.optimal_arm;
      out.free_dim = suite.dim;
      break;
    }
    case RewardKind::mlp_trained: {
      TrainConfig cfg;
      cfg.hidden_widths = s.hidden_widths;
      cfg.epochs = s.train_epochs;
      cfg.seed = seed;
      MlpReward model = train_mlp(data, suite, cfg).model;
      out.free_dim = model.free_param_count();
      out.optimal_arm = suite.optimal_arm;
      out.model = std::move(model);
      break;
    }
    case RewardKind::mlp_random: {
      std::vector<int> widths;
      widths.push_back(s.dim);
      for (int w : s.hidden_widths) widths.push_back(w);
      widths.push_back(1);
      MlpReward model = random_mlp(widths, seed, s.attack_layer);
      out.free_dim = model.free_param_count();
      out.optimal_arm = effective_optimal_arm(model, data);
      out.model = std::move(model);
      break;
    }
  }
  return out;
}

template <typename State>
AttackResult dispatch_attack(const Scenario& s, State& state, int optimal_arm,
                             const AlgoConfig& algo) {
  AttackOptions opt;
  opt.per_round_solve = s.per_round_solve;
  switch (s.attack) {
    case AttackKind::full_trajectory:
      return full_trajectory_attack(
          state, round_robin_trajectory(s.num_arms, s.horizon, optimal_arm),
          opt);
    case AttackKind::trajectory_free:
      return trajectory_free_attack(state, optimal_arm, s.horizon, opt);
    case AttackKind::osa:
      return osa_attack(state, optimal_arm, algo, opt);
    default:
      throw std::logic_error("dispatch_attack: not a constraint attack");
  }
}

inline AttackResult construct_attack(const Scenario& s, const ArmSuite& suite,
                                     const LoggedDataset& data,
                                     const PreparedModel& pm,
                                     std::uint64_t seed) {
  const AlgoConfig algo = s.algo_config(seed);
  if (s.attack == AttackKind::none) {
    AttackResult r;
    r.delta = Perturbation::zero(pm.free_dim);
    return r;
  }
  if (s.attack == AttackKind::noise) {
    double norm = s.noise_scale;
    if (s.noise_relative_to_osa) {
      Scenario ref = s;
      ref.attack = AttackKind::osa;
      const AttackResult osa = construct_attack(ref, suite, data, pm, seed);
      norm = s.noise_scale * osa.l2;
    }
    const detail::AttackTimer timer;
    AttackResult r;
    r.delta = random_noise_baseline(pm.free_dim, norm, seed);
    r.l2 = r.delta.l2();
    r.linf = r.delta.linf();
    r.wall_seconds = timer.seconds();
    return r;
  }
  if (std::holds_alternative<LinearReward>(pm.model)) {
    LinearAttackState state(suite, data);
    return dispatch_attack(s, state, pm.optimal_arm, algo);
  }
  NtkAttackState state(std::get<MlpReward>(pm.model), data);
  return dispatch_attack(s, state, pm.optimal_arm, algo);
}

// Attack success per the ledger definitions. Full-trajectory attacks count
// exact matches with the target after warm-up; everything else counts the
// decision rounds that avoided the optimal arm. Decision rounds exclude
// phases no perturbation can influence: UCB warm-up, the ETC exploration
// phase, and eps-greedy's random pulls.
inline double compute_asr(const Scenario& s, const BanditTrace& trace,
                          int optimal_arm, bool* all_rounds) {
  const int k = s.num_arms;
  const int t_max = trace.horizon();
  int hit = 0, total = 0;
  if (s.attack == AttackKind::full_trajectory) {
    const auto target = round_robin_trajectory(k, t_max, optimal_arm);
    for (int t = k + 1; t <= t_max; ++t) {
      ++total;
      hit += trace.pulled[t - 1] == target.arms[t - 1] ? 1 : 0;
    }
  } else {
    const int first =
        s.algorithm == Algorithm::etc ? s.etc_exploration * k + 1 : k + 1;
    for (int t = first; t <= t_max; ++t) {
      if (s.algorithm == Algorithm::eps_greedy && trace.explored[t - 1])
        continue;
      ++total;
      hit += trace.pulled[t - 1] != optimal_arm ? 1 : 0;
    }
  }
  if (all_rounds) *all_rounds = hit == total;
  return total > 0 ? static_cast<double>(hit) / total : 1.0;
}

}  // namespace detail

// Pipeline for one seed: suite -> log -> reward model -> attack on the clean
// log -> optional defense shuffle of the replay copy -> bandit replay ->
// metrics. Success is established by replay, never by solver status.
inline MetricsRow run_one(const Scenario& s, std::uint64_t seed) {
  const ArmSuite suite = make_arm_suite(s.num_arms, s.dim, seed);
  const int n = s.n_per_arm > 0 ? s.n_per_arm : s.horizon;
  const LoggedDataset data = sample_logged_data(suite, n, seed);
  const detail::PreparedModel pm = detail::prepare_model(s, suite, data, seed);

  const AttackResult attack = detail::construct_attack(s, suite, data, pm, seed);

  const LoggedDataset* replay_data = &data;
  LoggedDataset defended;
  if (s.defense_fraction > 0.0) {
    defended = shuffle_defense(data, DefenseConfig{s.defense_fraction, seed});
    replay_data = &defended;
  }

  const AlgoConfig algo = s.algo_config(seed);
  const BanditTrace trace = std::visit(
      [&](const auto& model) {
        return run_bandit(algo, *replay_data, model, attack.delta);
      },
      pm.model);

  MetricsRow row;
  row.scenario = s.name;
  row.seed = seed;
  bool all_rounds = false;
  row.asr = detail::compute_asr(s, trace, pm.optimal_arm, &all_rounds);
  row.success = all_rounds;
  row.delta_l2 = attack.delta.l2();
  row.delta_linf = attack.delta.linf();
  row.constraints = attack.constraint_count;
  row.status = to_string(attack.status);
  row.wall_seconds = attack.wall_seconds;
  return row;
}

// Seeds run independently; module failures are recorded on the row rather
// than aborting the batch.
inline std::vector<MetricsRow> run_scenario(const Scenario& s, int jobs = 1) {
  s.validate();
  std::vector<MetricsRow> rows(s.seeds.size());
  std::atomic<std::size_t> cursor{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= s.seeds.size()) return;
      try {
        rows[i] = run_one(s, s.seeds[i]);
      } catch (const std::exception& e) {
        MetricsRow& r = rows[i];
        r.scenario = s.name;
        r.seed = s.seeds[i];
        r.status = std::string("error: ") + e.what();
      }
    }
  };
  const int n_threads = std::max(
      1, std::min<int>(jobs, static_cast<int>(s.seeds.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return rows;
}

inline Scenario apply_axis(Scenario s, SweepAxis axis, double value) {
  std::ostringstream tag;
  switch (axis) {
    case SweepAxis::dimension:
      s.dim = static_cast<int>(value);
      tag << "d=" << static_cast<int>(value);
      break;
    case SweepAxis::noise_norm:
      s.attack = AttackKind::noise;
      s.noise_scale = value;
      tag << "noise=" << value;
      break;
    case SweepAxis::width:
      s.hidden_widths = {static_cast<int>(value)};
      tag << "w=" << static_cast<int>(value);
      break;
    case SweepAxis::horizon:
      s.horizon = static_cast<int>(value);
      tag << "T=" << static_cast<int>(value);
      break;
    case SweepAxis::defense_fraction:
      s.defense_fraction = value;
      tag << "defense=" << value;
      break;
  }
  s.name += "/" + tag.str();
  return s;
}

struct SweepPoint {
  double value = 0.0;
  std::vector<MetricsRow> rows;
};

struct SweepResult {
  SweepAxis axis = SweepAxis::dimension;
  std::vector<SweepPoint> points;
};

inline SweepResult sweep(SweepAxis axis, const std::vector<double>& grid,
                         const Scenario& base, int jobs = 1) {
  if (grid.empty()) throw std::invalid_argument("sweep: empty grid");
  SweepResult out;
  out.axis = axis;
  for (double value : grid) {
    const Scenario point = apply_axis(base, axis, value);
    out.points.push_back({value, run_scenario(point, jobs)});
  }
  return out;
}

struct ScenarioSummary {
  std::string scenario;
  int n = 0;
  double mean_asr = 0.0;
  double stderr_asr = 0.0;
  double success_fraction = 0.0;
  double mean_l2 = 0.0;
  double mean_linf = 0.0;
  double mean_constraints = 0.0;
  double mean_wall = 0.0;
  double median_wall = 0.0;
  std::map<std::string, int> statuses;
};

inline ScenarioSummary summarize(const std::vector<MetricsRow>& rows) {
  ScenarioSummary s;
  if (rows.empty()) return s;
  s.scenario = rows.front().scenario;
  s.n = static_cast<int>(rows.size());
  double asr_sq = 0.0;
  std::vector<double> walls;
  for (const auto& r : rows) {
    s.mean_asr += r.asr;
    asr_sq += r.asr * r.asr;
    s.success_fraction += r.success ? 1.0 : 0.0;
    s.mean_l2 += r.delta_l2;
    s.mean_linf += r.delta_linf;
    s.mean_constraints += r.constraints;
    s.mean_wall += r.wall_seconds;
    walls.push_back(r.wall_seconds);
    ++s.statuses[r.status];
  }
  const double n = static_cast<double>(s.n);
  s.mean_asr /= n;
  s.success_fraction /= n;
  s.mean_l2 /= n;
  s.mean_linf /= n;
  s.mean_constraints /= n;
  s.mean_wall /= n;
  std::sort(walls.begin(), walls.end());
  s.median_wall = walls[walls.size() / 2];
  const double var = std::max(0.0, asr_sq / n - s.mean_asr * s.mean_asr);
  s.stderr_asr = s.n > 1 ? std::sqrt(var / (n - 1)) : 0.0;
  return s;
}

inline nlohmann::json to_json(const ScenarioSummary& s) {
  return nlohmann::json{{"scenario", s.scenario},
                        {"n", s.n},
                        {"mean_asr", s.mean_asr},
                        {"stderr_asr", s.stderr_asr},
                        {"success_fraction", s.success_fraction},
                        {"mean_l2", s.mean_l2},
                        {"mean_linf", s.mean_linf},
                        {"mean_constraints", s.mean_constraints},
                        {"mean_wall_seconds", s.mean_wall},
                        {"median_wall_seconds", s.median_wall},
                        {"statuses", s.statuses}};
}

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

inline LineFit least_squares_fit(const std::vector<double>& xs,
                                 const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw std::invalid_argument("fit: need >= 2 matched points");
  const double n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
    syy += ys[i] * ys[i];
  }
  LineFit fit;
  const double denom = n * sxx - sx * sx;
  if (denom == 0.0) throw std::invalid_argument("fit: degenerate x values");
  fit.slope = (n * sxy - sx * sy) / denom;
  fit.intercept = (sy - fit.slope * sx) / n;
  double ss_res = 0.0, ss_tot = 0.0;
  const double ymean = sy / n;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double pred = fit.intercept + fit.slope * xs[i];
    ss_res += (ys[i] - pred) * (ys[i] - pred);
    ss_tot += (ys[i] - ymean) * (ys[i] - ymean);
  }
  fit.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  return fit;
}

inline nlohmann::json sweep_summary_json(const SweepResult& result) {
  nlohmann::json points = nlohmann::json::array();
  std::vector<double> values, mean_l2, mean_linf, mean_constraints;
  for (const auto& p : result.points) {
    const auto s = summarize(p.rows);
    auto j = to_json(s);
    j["value"] = p.value;
    points.push_back(j);
    values.push_back(p.value);
    mean_l2.push_back(s.mean_l2);
    mean_linf.push_back(s.mean_linf);
    mean_constraints.push_back(s.mean_constraints);
  }
  nlohmann::json out{{"axis", to_string(result.axis)}, {"points", points}};
  if (result.axis == SweepAxis::dimension && values.size() >= 2) {
    std::vector<double> log_d, log_l2;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (mean_l2[i] > 0.0) {
        log_d.push_back(std::log(values[i]));
        log_l2.push_back(std::log(mean_l2[i]));
      }
    }
    if (log_d.size() >= 2) {
      const auto fit = least_squares_fit(log_d, log_l2);
      out["log_l2_vs_log_dim"] = {
          {"slope", fit.slope}, {"intercept", fit.intercept}, {"r2", fit.r2}};
    }
    bool l2_mono = true, linf_mono = true;
    for (std::size_t i = 1; i < values.size(); ++i) {
      l2_mono = l2_mono && mean_l2[i] <= mean_l2[i - 1];
      linf_mono = linf_mono && mean_linf[i] <= mean_linf[i - 1];
    }
    out["l2_monotone_nonincreasing"] = l2_mono;
    out["linf_monotone_nonincreasing"] = linf_mono;
  }
  if (result.axis == SweepAxis::horizon && values.size() >= 2) {
    std::vector<double> log_t;
    for (double v : values) log_t.push_back(std::log(v));
    const auto fit = least_squares_fit(log_t, mean_constraints);
    out["constraints_vs_log_horizon"] = {
        {"slope", fit.slope}, {"intercept", fit.intercept}, {"r2", fit.r2}};
  }
  return out;
}

struct FeasibilityPoint {
  int dim = 0;
  int n_seeds = 0;
  double feasible_fraction = 0.0;
};

// Below d = K the orthogonal-mean construction cannot exist; the probe only
// needs non-degenerate sampling distributions, so it falls back to plain
// random unit means there.
inline ArmSuite make_probe_suite(int num_arms, int dim, std::uint64_t seed) {
  if (dim >= num_arms) return make_arm_suite(num_arms, dim, seed);
  auto rng = make_rng(seed, rng_stream::suite);
  std::normal_distribution<double> gauss(0.0, 1.0);
  ArmSuite suite;
  suite.num_arms = num_arms;
  suite.dim = dim;
  suite.optimal_arm = 0;
  suite.means.resize(num_arms, dim);
  for (int i = 0; i < num_arms; ++i) {
    Eigen::VectorXd v(dim);
    double norm = 0.0;
    do {
      for (int j = 0; j < dim; ++j) v(j) = gauss(rng);
      norm = v.norm();
    } while (norm < 1e-12);
    suite.means.row(i) = (v / norm).transpose();
  }
  suite.weight = suite.means.row(0).transpose();
  return suite;
}

// Fraction of seeds on which the full-trajectory program has a certified
// optimum, per dimension.
inline std::vector<FeasibilityPoint> feasibility_probe(
    int num_arms, int horizon, const std::vector<int>& d_grid,
    const std::vector<std::uint64_t>& seeds, int jobs = 1) {
  if (seeds.empty()) throw std::invalid_argument("feasibility_probe: no seeds");
  const int n_seeds = static_cast<int>(seeds.size());
  std::vector<FeasibilityPoint> out;
  for (int d : d_grid) {
    std::atomic<int> feasible{0};
    std::atomic<int> cursor{0};
    auto worker = [&] {
      for (;;) {
        const int i = cursor.fetch_add(1);
        if (i >= n_seeds) return;
        const std::uint64_t seed = seeds[i];
        const ArmSuite suite = make_probe_suite(num_arms, d, seed);
        const LoggedDataset data = sample_logged_data(suite, horizon, seed);
        const auto target =
            round_robin_trajectory(num_arms, horizon, suite.optimal_arm);
        LinearAttackState state(suite, data);
        const auto result = full_trajectory_attack(state, target);
        if (result.status == QpStatus::optimal) feasible.fetch_add(1);
      }
    };
    const int n_threads = std::max(1, std::min(jobs, n_seeds));
    if (n_threads == 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
      for (auto& t : pool) t.join();
    }
    out.push_back({d, n_seeds, static_cast<double>(feasible.load()) / n_seeds});
  }
  return out;
}

inline std::vector<std::uint64_t> make_seed_list(int n) {
  std::vector<std::uint64_t> seeds(n);
  for (int i = 0; i < n; ++i) seeds[i] = i;
  return seeds;
}

inline nlohmann::json feasibility_json(int num_arms, int horizon,
                                       const std::vector<FeasibilityPoint>& pts) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : pts)
    points.push_back({{"d", p.dim},
                      {"n", p.n_seeds},
                      {"feasible_fraction", p.feasible_fraction}});
  return nlohmann::json{
      {"K", num_arms},
      {"T", horizon},
      {"threshold_dim", (horizon - num_arms) * (num_arms - 1)},
      {"points", points}};
}

}  // namespace banditpert
