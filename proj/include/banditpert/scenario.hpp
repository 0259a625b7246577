#pragma once

#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "banditpert/bandit.hpp"
#include "banditpert/common.hpp"

namespace banditpert {

enum class RewardKind { linear, mlp_trained, mlp_random };
enum class AttackKind { none, noise, full_trajectory, trajectory_free, osa };

inline const char* to_string(RewardKind k) {
  switch (k) {
    case RewardKind::linear: return "linear";
    case RewardKind::mlp_trained: return "mlp_trained";
    case RewardKind::mlp_random: return "mlp_random";
  }
  return "unknown";
}

inline const char* to_string(AttackKind k) {
  switch (k) {
    case AttackKind::none: return "none";
    case AttackKind::noise: return "noise";
    case AttackKind::full_trajectory: return "full_trajectory";
    case AttackKind::trajectory_free: return "trajectory_free";
    case AttackKind::osa: return "osa";
  }
  return "unknown";
}

inline RewardKind reward_kind_from_string(const std::string& s) {
  if (s == "linear") return RewardKind::linear;
  if (s == "mlp_trained") return RewardKind::mlp_trained;
  if (s == "mlp_random") return RewardKind::mlp_random;
  throw std::invalid_argument("unknown reward kind: " + s);
}

inline AttackKind attack_kind_from_string(const std::string& s) {
  if (s == "none") return AttackKind::none;
  if (s == "noise") return AttackKind::noise;
  if (s == "full_trajectory") return AttackKind::full_trajectory;
  if (s == "trajectory_free") return AttackKind::trajectory_free;
  if (s == "osa") return AttackKind::osa;
  throw std::invalid_argument("unknown attack kind: " + s);
}

// One experiment: suite shape, reward model, attack, defense, seed list.
struct Scenario {
  std::string name = "scenario";

  int num_arms = 3;
  int dim = 1000;
  int horizon = 100;
  int n_per_arm = 0;  // 0 means horizon (minimum that never exhausts the log)

  RewardKind reward = RewardKind::linear;
  std::vector<int> hidden_widths = {1000};
  int attack_layer = 0;  // attackable layer for random networks
  int train_epochs = 100;

  AttackKind attack = AttackKind::osa;
  double noise_scale = 1.0;
  bool noise_relative_to_osa = true;  // scale times the matched OSA norm
  bool per_round_solve = false;

  Algorithm algorithm = Algorithm::ucb;
  int etc_exploration = 5;
  double eps0 = 0.1;
  double eps_min = 0.01;

  double defense_fraction = 0.0;

  std::vector<std::uint64_t> seeds = default_seeds();

  static std::vector<std::uint64_t> default_seeds() {
    std::vector<std::uint64_t> s(50);
    for (int i = 0; i < 50; ++i) s[i] = i;
    return s;
  }

  AlgoConfig algo_config(std::uint64_t seed) const {
    AlgoConfig cfg;
    cfg.algorithm = algorithm;
    cfg.horizon = horizon;
    cfg.etc_exploration = etc_exploration;
    cfg.eps0 = eps0;
    cfg.eps_min = eps_min;
    cfg.seed = seed;
    return cfg;
  }

  void validate() const {
    if (name.empty() || name.find(',') != std::string::npos)
      throw std::invalid_argument("scenario: name must be non-empty, no commas");
    if (num_arms < 2) throw std::invalid_argument("scenario: K must be >= 2");
    if (dim < num_arms)
      throw std::invalid_argument("scenario: need d >= K");
    algo_config(0).validate(num_arms);
    if (n_per_arm < 0) throw std::invalid_argument("scenario: bad n_per_arm");
    if (reward != RewardKind::linear) {
      if (hidden_widths.empty())
        throw std::invalid_argument("scenario: mlp rewards need hidden widths");
      for (int w : hidden_widths)
        if (w < 1) throw std::invalid_argument("scenario: bad hidden width");
      if (attack_layer < 0 ||
          attack_layer > static_cast<int>(hidden_widths.size()))
        throw std::invalid_argument("scenario: attack_layer out of range");
      if (train_epochs < 0)
        throw std::invalid_argument("scenario: bad epoch count");
    }
    if ((attack == AttackKind::full_trajectory ||
         attack == AttackKind::trajectory_free) &&
        algorithm != Algorithm::ucb)
      throw std::invalid_argument(
          "scenario: trajectory attacks are defined for UCB only; use osa "
          "for etc/eps_greedy");
    if (attack == AttackKind::noise && noise_scale < 0.0)
      throw std::invalid_argument("scenario: bad noise scale");
    if (defense_fraction < 0.0 || defense_fraction > 1.0)
      throw std::invalid_argument("scenario: defense fraction in [0,1]");
    if (seeds.empty()) throw std::invalid_argument("scenario: no seeds");
  }
};

// One result line per (scenario, seed).
struct MetricsRow {
  std::string scenario;
  std::uint64_t seed = 0;
  double asr = 0.0;
  bool success = false;
  double delta_l2 = 0.0;
  double delta_linf = 0.0;
  int constraints = 0;
  std::string status = "optimal";
  double wall_seconds = 0.0;
};

inline std::string metrics_csv_header() {
  return "scenario,seed,asr,success,delta_l2,delta_linf,constraints,status,"
         "wall_seconds";
}

inline std::string metrics_to_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream os;
  os << metrics_csv_header() << '\n';
  for (const auto& r : rows) {
    std::string status = r.status;
    for (auto& ch : status)
      if (ch == ',' || ch == '\n') ch = ';';
    os << r.scenario << ',' << r.seed << ',' << format_double(r.asr) << ','
       << (r.success ? 1 : 0) << ',' << format_double(r.delta_l2) << ','
       << format_double(r.delta_linf) << ',' << r.constraints << ',' << status
       << ',' << format_double(r.wall_seconds) << '\n';
  }
  return os.str();
}

inline std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != metrics_csv_header())
    throw std::invalid_argument("metrics csv: bad header");
  std::vector<MetricsRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) f.push_back(field);
    if (f.size() != 9) throw std::invalid_argument("metrics csv: bad row");
    MetricsRow r;
    r.scenario = f[0];
    r.seed = std::strtoull(f[1].c_str(), nullptr, 10);
    r.asr = std::strtod(f[2].c_str(), nullptr);
    r.success = f[3] == "1";
    r.delta_l2 = std::strtod(f[4].c_str(), nullptr);
    r.delta_linf = std::strtod(f[5].c_str(), nullptr);
    r.constraints = static_cast<int>(std::strtol(f[6].c_str(), nullptr, 10));
    r.status = f[7];
    r.wall_seconds = std::strtod(f[8].c_str(), nullptr);
    rows.push_back(std::move(r));
  }
  return rows;
}

enum class SweepAxis { dimension, noise_norm, width, horizon, defense_fraction };

inline const char* to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::dimension: return "dimension";
    case SweepAxis::noise_norm: return "noise_norm";
    case SweepAxis::width: return "width";
    case SweepAxis::horizon: return "horizon";
    case SweepAxis::defense_fraction: return "defense_fraction";
  }
  return "unknown";
}

inline SweepAxis sweep_axis_from_string(const std::string& s) {
  if (s == "dimension") return SweepAxis::dimension;
  if (s == "noise_norm") return SweepAxis::noise_norm;
  if (s == "width") return SweepAxis::width;
  if (s == "horizon") return SweepAxis::horizon;
  if (s == "defense_fraction") return SweepAxis::defense_fraction;
  throw std::invalid_argument("unknown sweep axis: " + s);
}

struct SweepSpec {
  SweepAxis axis = SweepAxis::dimension;
  std::vector<double> grid;
};

struct LoadedConfig {
  Scenario scenario;
  std::optional<SweepSpec> sweep;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string part;
  while (std::getline(is, part, sep)) out.push_back(trim(part));
  return out;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw std::invalid_argument("config: bad boolean: " + s);
}

}  // namespace detail

// "a..b" (inclusive) or a comma-separated list.
inline std::vector<std::uint64_t> parse_seed_range(const std::string& text) {
  const std::string s = detail::trim(text);
  const auto dots = s.find("..");
  std::vector<std::uint64_t> seeds;
  if (dots != std::string::npos) {
    const std::uint64_t lo = std::strtoull(s.substr(0, dots).c_str(), nullptr, 10);
    const std::uint64_t hi = std::strtoull(s.substr(dots + 2).c_str(), nullptr, 10);
    if (hi < lo) throw std::invalid_argument("config: bad seed range: " + text);
    for (std::uint64_t v = lo; v <= hi; ++v) seeds.push_back(v);
  } else {
    for (const auto& part : detail::split(s, ','))
      if (!part.empty()) seeds.push_back(std::strtoull(part.c_str(), nullptr, 10));
  }
  if (seeds.empty()) throw std::invalid_argument("config: empty seed set");
  return seeds;
}

// Plain-text config: [section] headers, key = value lines, # comments.
inline std::map<std::string, std::string> parse_config_text(std::istream& is) {
  std::map<std::string, std::string> out;
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::invalid_argument("config line " + std::to_string(lineno) +
                                    ": unterminated section");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": empty key");
    const std::string full = section.empty() ? key : section + "." + key;
    if (out.count(full))
      throw std::invalid_argument("config: duplicate key " + full);
    out[full] = value;
  }
  return out;
}

inline LoadedConfig config_from_map(std::map<std::string, std::string> kv) {
  LoadedConfig cfg;
  Scenario& s = cfg.scenario;
  auto take = [&](const std::string& key) -> std::optional<std::string> {
    auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto take_int = [&](const std::string& key, int& into) {
    if (auto v = take(key)) into = static_cast<int>(std::strtol(v->c_str(), nullptr, 10));
  };
  auto take_double = [&](const std::string& key, double& into) {
    if (auto v = take(key)) into = std::strtod(v->c_str(), nullptr);
  };
  auto take_bool = [&](const std::string& key, bool& into) {
    if (auto v = take(key)) into = detail::parse_bool(*v);
  };

  if (auto v = take("name")) s.name = *v;
  take_int("suite.K", s.num_arms);
  take_int("suite.d", s.dim);
  take_int("suite.T", s.horizon);
  take_int("suite.n_per_arm", s.n_per_arm);
  if (auto v = take("reward.kind")) s.reward = reward_kind_from_string(*v);
  if (auto v = take("reward.widths")) {
    s.hidden_widths.clear();
    for (const auto& part : detail::split(*v, ','))
      if (!part.empty())
        s.hidden_widths.push_back(
            static_cast<int>(std::strtol(part.c_str(), nullptr, 10)));
  }
  take_int("reward.attack_layer", s.attack_layer);
  take_int("reward.epochs", s.train_epochs);
  if (auto v = take("attack.kind")) s.attack = attack_kind_from_string(*v);
  take_double("attack.noise_scale", s.noise_scale);
  take_bool("attack.noise_relative_to_osa", s.noise_relative_to_osa);
  take_bool("attack.per_round_solve", s.per_round_solve);
  if (auto v = take("algo.algorithm")) s.algorithm = algorithm_from_string(*v);
  take_int("algo.etc_m", s.etc_exploration);
  take_double("algo.eps0", s.eps0);
  take_double("algo.eps_min", s.eps_min);
  take_double("defense.fraction", s.defense_fraction);
  if (auto v = take("seeds.range")) s.seeds = parse_seed_range(*v);

  std::optional<std::string> axis = take("sweep.axis");
  std::optional<std::string> grid = take("sweep.grid");
  if (axis.has_value() != grid.has_value())
    throw std::invalid_argument("config: sweep needs both axis and grid");
  if (axis) {
    SweepSpec spec;
    spec.axis = sweep_axis_from_string(*axis);
    for (const auto& part : detail::split(*grid, ','))
      if (!part.empty()) spec.grid.push_back(std::strtod(part.c_str(), nullptr));
    if (spec.grid.empty()) throw std::invalid_argument("config: empty grid");
    cfg.sweep = spec;
  }

  if (!kv.empty()) {
    std::string unknown;
    for (const auto& [k, v] : kv) unknown += (unknown.empty() ? "" : ", ") + k;
    throw std::invalid_argument("config: unknown keys: " + unknown);
  }
  s.validate();
  return cfg;
}

inline LoadedConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("config: cannot open " + path);
  return config_from_map(parse_config_text(is));
}

}  // namespace banditpert
