#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "banditpert/common.hpp"
#include "banditpert/data.hpp"
#include "banditpert/reward.hpp"

namespace banditpert {

enum class Algorithm { ucb, etc, eps_greedy };

inline const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::ucb: return "ucb";
    case Algorithm::etc: return "etc";
    case Algorithm::eps_greedy: return "eps_greedy";
  }
  return "unknown";
}

inline Algorithm algorithm_from_string(const std::string& s) {
  if (s == "ucb") return Algorithm::ucb;
  if (s == "etc") return Algorithm::etc;
  if (s == "eps_greedy") return Algorithm::eps_greedy;
  throw std::invalid_argument("unknown algorithm: " + s);
}

struct AlgoConfig {
  Algorithm algorithm = Algorithm::ucb;
  int horizon = 100;        // T
  int etc_exploration = 5;  // m: pulls per arm before committing
  double eps0 = 0.1;
  double eps_min = 0.01;
  std::uint64_t seed = 0;   // eps-greedy randomness

  void validate(int num_arms) const {
    if (num_arms < 2) throw std::invalid_argument("bandit: need K >= 2");
    if (algorithm == Algorithm::etc) {
      if (etc_exploration < 1)
        throw std::invalid_argument("bandit: ETC needs m >= 1");
      if (horizon < etc_exploration * num_arms)
        throw std::invalid_argument("bandit: ETC needs T >= m*K");
    } else if (horizon < num_arms) {
      throw std::invalid_argument("bandit: need T >= K");
    }
    if (algorithm == Algorithm::eps_greedy &&
        (eps0 < 0.0 || eps0 > 1.0 || eps_min < 0.0 || eps_min > eps0))
      throw std::invalid_argument("bandit: bad epsilon schedule");
  }
};

// Empirical mean plus the sqrt(2 ln t / N) exploration bonus.
inline double ucb_score(double mean_reward, long n_pulls, double t) {
  if (n_pulls < 1) throw std::domain_error("ucb_score: N must be >= 1");
  if (t < 2.0) throw std::domain_error("ucb_score: t must be >= 2");
  return mean_reward + std::sqrt(2.0 * std::log(t) / static_cast<double>(n_pulls));
}

inline double epsilon_schedule(int t, const AlgoConfig& cfg) {
  if (t < 1) throw std::domain_error("epsilon_schedule: t must be >= 1");
  return std::max(cfg.eps_min, cfg.eps0 / static_cast<double>(t));
}

struct BanditTrace {
  std::vector<int> pulled;             // arm chosen at each round, 0-based
  Eigen::MatrixXd scores;              // T x K decision scores, NaN when forced
  Eigen::MatrixXi counts;              // T x K pull counts after each round
  std::vector<int> consumed_index;     // per-round sample index read
  std::vector<std::uint8_t> explored;  // eps-greedy random rounds
  Eigen::VectorXd final_means;         // empirical mean reward per arm

  int horizon() const { return static_cast<int>(pulled.size()); }
  int num_arms() const { return static_cast<int>(scores.cols()); }
};

namespace detail {

inline int argmax_lowest(const Eigen::VectorXd& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return best;
}

}  // namespace detail

// Replays the bandit over the logged data with rewards evaluated through the
// (possibly perturbed) model. Each pull of an arm consumes that arm's next
// unread sample.
template <typename Model>
BanditTrace run_bandit(const AlgoConfig& cfg, const LoggedDataset& data,
                       const Model& model, const Perturbation& delta) {
  const int k = data.num_arms();
  cfg.validate(k);
  const int t_max = cfg.horizon;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  BanditTrace trace;
  trace.pulled.resize(t_max);
  trace.scores = Eigen::MatrixXd::Constant(t_max, k, nan);
  trace.counts = Eigen::MatrixXi::Zero(t_max, k);
  trace.consumed_index.resize(t_max);
  trace.explored.assign(t_max, 0);

  std::vector<long> pulls(k, 0);
  std::vector<int> next(k, 0);
  Eigen::VectorXd means = Eigen::VectorXd::Zero(k);

  auto pull = [&](int arm, int round) {
    if (next[arm] >= data.samples(arm))
      throw std::runtime_error("run_bandit: log exhausted for arm " +
                               std::to_string(arm));
    const double r = eval_reward(model, delta, data.arms[arm].row(next[arm]).transpose());
    trace.consumed_index[round - 1] = next[arm];
    ++next[arm];
    ++pulls[arm];
    means(arm) += (r - means(arm)) / static_cast<double>(pulls[arm]);
    trace.pulled[round - 1] = arm;
    for (int i = 0; i < k; ++i) trace.counts(round - 1, i) = static_cast<int>(pulls[i]);
  };

  auto mean_scores = [&] {
    Eigen::VectorXd s(k);
    for (int i = 0; i < k; ++i) s(i) = pulls[i] > 0 ? means(i) : nan;
    return s;
  };

  switch (cfg.algorithm) {
    case Algorithm::ucb: {
      for (int t = 1; t <= std::min(k, t_max); ++t) pull(t - 1, t);
      for (int t = k + 1; t <= t_max; ++t) {
        Eigen::VectorXd s(k);
        for (int i = 0; i < k; ++i)
          s(i) = ucb_score(means(i), pulls[i], static_cast<double>(t));
        trace.scores.row(t - 1) = s.transpose();
        pull(detail::argmax_lowest(s), t);
      }
      break;
    }
    case Algorithm::etc: {
      const int explore_rounds = cfg.etc_exploration * k;
      for (int t = 1; t <= std::min(explore_rounds, t_max); ++t) {
        pull((t - 1) % k, t);
        trace.scores.row(t - 1) = mean_scores().transpose();
      }
      if (t_max > explore_rounds) {
        const int committed = detail::argmax_lowest(means);
        for (int t = explore_rounds + 1; t <= t_max; ++t) {
          trace.scores.row(t - 1) = mean_scores().transpose();
          pull(committed, t);
        }
      }
      break;
    }
    case Algorithm::eps_greedy: {
      auto rng = make_rng(cfg.seed, rng_stream::algorithm);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      std::uniform_int_distribution<int> pick(0, k - 1);
      for (int t = 1; t <= std::min(k, t_max); ++t) pull(t - 1, t);
      for (int t = k + 1; t <= t_max; ++t) {
        trace.scores.row(t - 1) = mean_scores().transpose();
        if (unit(rng) < epsilon_schedule(t, cfg)) {
          trace.explored[t - 1] = 1;
          pull(pick(rng), t);
        } else {
          pull(detail::argmax_lowest(means), t);
        }
      }
      break;
    }
  }

  trace.final_means = means;
  return trace;
}

inline std::string trace_to_csv(const BanditTrace& trace) {
  std::ostringstream os;
  const int k = trace.num_arms();
  os << "t,arm";
  for (int i = 1; i <= k; ++i) os << ",score_" << i;
  for (int i = 1; i <= k; ++i) os << ",N_" << i;
  os << '\n';
  for (int t = 1; t <= trace.horizon(); ++t) {
    os << t << ',' << trace.pulled[t - 1];
    for (int i = 0; i < k; ++i) os << ',' << format_double(trace.scores(t - 1, i));
    for (int i = 0; i < k; ++i) os << ',' << trace.counts(t - 1, i);
    os << '\n';
  }
  return os.str();
}

}  // namespace banditpert
