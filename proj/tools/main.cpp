// banditpert: reward-model weight-perturbation attacks on offline bandit
// training, with seeded scenario runs, axis sweeps, a feasibility probe, the
// shuffle defense, and CSV/JSON reporting.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "banditpert/harness.hpp"
#include "banditpert/scenario.hpp"

namespace fs = std::filesystem;
using namespace banditpert;

namespace {

struct CommonFlags {
  std::string config_path;
  std::string seeds;
  std::string out_dir = "out";
  int jobs = 1;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool config_required) {
  auto* config = cmd->add_option("--config", flags.config_path,
                                 "scenario config file (key = value sections)");
  if (config_required) config->required();
  cmd->add_option("--seeds", flags.seeds,
                  "seed set override, e.g. 0..49 or 1,5,9");
  cmd->add_option("--out", flags.out_dir, "output directory");
  cmd->add_option("--jobs", flags.jobs, "worker threads across seeds")
      ->check(CLI::PositiveNumber);
}

void write_outputs(const std::string& out_dir,
                   const std::vector<MetricsRow>& rows,
                   const nlohmann::json& summary) {
  fs::create_directories(out_dir);
  {
    std::ofstream os(fs::path(out_dir) / "metrics.csv");
    os << metrics_to_csv(rows);
    if (!os) throw std::runtime_error("cannot write metrics.csv");
  }
  {
    std::ofstream os(fs::path(out_dir) / "summary.json");
    os << summary.dump(2) << '\n';
    if (!os) throw std::runtime_error("cannot write summary.json");
  }
}

Scenario load_scenario_with_overrides(const CommonFlags& flags,
                                      std::optional<SweepSpec>* sweep_spec) {
  LoadedConfig cfg = load_config(flags.config_path);
  if (!flags.seeds.empty()) cfg.scenario.seeds = parse_seed_range(flags.seeds);
  cfg.scenario.validate();
  if (sweep_spec) *sweep_spec = cfg.sweep;
  return cfg.scenario;
}

void print_point(const ScenarioSummary& s) {
  std::cout << s.scenario << ": n=" << s.n << " mean_asr=" << s.mean_asr
            << " success=" << s.success_fraction << " mean_l2=" << s.mean_l2
            << " mean_constraints=" << s.mean_constraints << '\n';
}

int cmd_attack(const CommonFlags& flags) {
  const Scenario s = load_scenario_with_overrides(flags, nullptr);
  const auto rows = run_scenario(s, flags.jobs);
  const auto summary = summarize(rows);
  print_point(summary);
  write_outputs(flags.out_dir, rows, to_json(summary));
  return 0;
}

int cmd_sweep(const CommonFlags& flags, const std::string& axis_flag,
              const std::string& grid_flag) {
  std::optional<SweepSpec> spec;
  const Scenario base = load_scenario_with_overrides(flags, &spec);
  if (!axis_flag.empty()) {
    SweepSpec s;
    s.axis = sweep_axis_from_string(axis_flag);
    for (const auto& part : detail::split(grid_flag, ','))
      if (!part.empty()) s.grid.push_back(std::strtod(part.c_str(), nullptr));
    if (s.grid.empty())
      throw std::invalid_argument("sweep: --axis needs a non-empty --grid");
    spec = s;
  }
  if (!spec)
    throw std::invalid_argument(
        "sweep: provide --axis/--grid or a [sweep] config section");

  const auto result = sweep(spec->axis, spec->grid, base, flags.jobs);
  std::vector<MetricsRow> all_rows;
  for (const auto& p : result.points) {
    print_point(summarize(p.rows));
    all_rows.insert(all_rows.end(), p.rows.begin(), p.rows.end());
  }
  write_outputs(flags.out_dir, all_rows, sweep_summary_json(result));
  return 0;
}

int cmd_defense(const CommonFlags& flags, const std::string& fractions_flag) {
  const Scenario base = load_scenario_with_overrides(flags, nullptr);
  std::vector<double> fractions;
  for (const auto& part : detail::split(fractions_flag, ','))
    if (!part.empty()) fractions.push_back(std::strtod(part.c_str(), nullptr));
  if (fractions.empty())
    throw std::invalid_argument("defense: empty fraction list");
  const auto result =
      sweep(SweepAxis::defense_fraction, fractions, base, flags.jobs);
  std::vector<MetricsRow> all_rows;
  for (const auto& p : result.points) {
    print_point(summarize(p.rows));
    all_rows.insert(all_rows.end(), p.rows.begin(), p.rows.end());
  }
  write_outputs(flags.out_dir, all_rows, sweep_summary_json(result));
  return 0;
}

int cmd_feasibility(const CommonFlags& flags, int num_arms, int horizon,
                    const std::string& dims_flag) {
  std::vector<int> dims;
  for (const auto& part : detail::split(dims_flag, ','))
    if (!part.empty())
      dims.push_back(static_cast<int>(std::strtol(part.c_str(), nullptr, 10)));
  if (dims.empty()) throw std::invalid_argument("feasibility: empty dim grid");
  std::vector<std::uint64_t> seeds =
      flags.seeds.empty() ? make_seed_list(100) : parse_seed_range(flags.seeds);

  const auto points = feasibility_probe(num_arms, horizon, dims, seeds, flags.jobs);
  for (const auto& p : points)
    std::cout << "d=" << p.dim << " feasible=" << p.feasible_fraction << " ("
              << p.n_seeds << " seeds)\n";

  fs::create_directories(flags.out_dir);
  std::ofstream os(fs::path(flags.out_dir) / "summary.json");
  os << feasibility_json(num_arms, horizon, points).dump(2) << '\n';
  if (!os) throw std::runtime_error("cannot write summary.json");
  return 0;
}

int cmd_report(const std::vector<std::string>& inputs,
               const std::string& out_dir) {
  if (inputs.empty()) throw std::invalid_argument("report: no input files");
  std::vector<MetricsRow> all_rows;
  for (const auto& path : inputs) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("report: cannot open " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    const auto rows = parse_metrics_csv(ss.str());
    all_rows.insert(all_rows.end(), rows.begin(), rows.end());
  }
  // Group by scenario id, preserving first-seen order.
  std::vector<std::string> order;
  std::map<std::string, std::vector<MetricsRow>> by_scenario;
  for (const auto& r : all_rows) {
    if (!by_scenario.count(r.scenario)) order.push_back(r.scenario);
    by_scenario[r.scenario].push_back(r);
  }
  nlohmann::json summaries = nlohmann::json::array();
  for (const auto& name : order) {
    const auto s = summarize(by_scenario[name]);
    print_point(s);
    summaries.push_back(to_json(s));
  }
  write_outputs(out_dir, all_rows, nlohmann::json{{"scenarios", summaries}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "banditpert: weight-perturbation attacks on offline bandit training"};
  app.require_subcommand(1);

  CommonFlags attack_flags, sweep_flags, defense_flags, feas_flags;
  std::string sweep_axis, sweep_grid;
  std::string defense_fractions = "0,0.25,0.5,0.75";
  int feas_k = 3, feas_t = 20;
  std::string feas_dims;
  std::vector<std::string> report_inputs;
  std::string report_out = "out";

  auto* attack = app.add_subcommand("attack", "run one scenario across seeds");
  add_common(attack, attack_flags, true);

  auto* sweep_cmd = app.add_subcommand("sweep", "run a scenario along an axis");
  add_common(sweep_cmd, sweep_flags, true);
  sweep_cmd->add_option("--axis", sweep_axis,
                        "dimension|noise_norm|width|horizon|defense_fraction");
  sweep_cmd->add_option("--grid", sweep_grid, "comma-separated axis values");

  auto* defense =
      app.add_subcommand("defense", "shuffle-defense sweep on matched seeds");
  add_common(defense, defense_flags, true);
  defense->add_option("--fractions", defense_fractions,
                      "comma-separated shuffle fractions");

  auto* feas = app.add_subcommand(
      "feasibility", "full-trajectory feasible fraction across dimensions");
  add_common(feas, feas_flags, false);
  feas->add_option("--K", feas_k, "number of arms")->check(CLI::PositiveNumber);
  feas->add_option("--T", feas_t, "horizon")->check(CLI::PositiveNumber);
  feas->add_option("--dims", feas_dims, "comma-separated dimensions")
      ->required();

  auto* report = app.add_subcommand("report", "aggregate metrics.csv files");
  report->add_option("--inputs", report_inputs, "metrics.csv paths")
      ->required();
  report->add_option("--out", report_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  // Configuration problems exit nonzero; attack failures are data, not
  // errors, and land in the metrics instead.
  try {
    if (attack->parsed()) return cmd_attack(attack_flags);
    if (sweep_cmd->parsed()) return cmd_sweep(sweep_flags, sweep_axis, sweep_grid);
    if (defense->parsed()) return cmd_defense(defense_flags, defense_fractions);
    if (feas->parsed())
      return cmd_feasibility(feas_flags, feas_k, feas_t, feas_dims);
    if (report->parsed()) return cmd_report(report_inputs, report_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
