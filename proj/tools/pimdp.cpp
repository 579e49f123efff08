// Experiment runner and artifact tooling. Subcommands: run, verify-theory,
// sweep, plot, layout. Exit codes: 0 success, 2 validation error,
// 3 verification failure, 4 numerical watchdog.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "pimdp/config.hpp"
#include "pimdp/runner.hpp"
#include "pimdp/svg.hpp"
#include "pimdp/tabular.hpp"
#include "pimdp/theory.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitVerification = 3;
constexpr int kExitWatchdog = 4;

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw pimdp::ConfigError("cannot open: " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

int cmd_run(const std::string& config_path, long seed_offset, int workers,
            const std::string& out) {
  const std::string text = slurp(config_path);
  const pimdp::ExperimentConfig cfg = pimdp::parse_experiment_config(text);
  const pimdp::ExperimentSummary s = pimdp::run_experiment(cfg, seed_offset, workers, out);
  const std::string out_dir = (out.empty() ? cfg.out_dir : out) + "/" + cfg.name;
  pimdp::write_manifest(out_dir, text, s.artifacts);
  for (std::size_t k = 0; k < s.seeds.size(); ++k) {
    std::cout << "seed " << s.seeds[k] << " final_eval " << s.final_eval_means[k];
    if (!std::isnan(s.final_success_rates[k]))
      std::cout << " success_rate " << s.final_success_rates[k];
    if (!std::isnan(s.final_gate_rates[k]))
      std::cout << " gate_rate " << s.final_gate_rates[k];
    std::cout << "\n";
  }
  std::cout << "artifacts " << s.artifacts.size() << " -> " << out_dir << "\n";
  return kExitOk;
}

int cmd_verify_theory(const std::string& config_path, int instances, std::uint64_t seed,
                      bool self_test, const std::string& out) {
  pimdp::TheoryConfig cfg;
  cfg.n_instances = instances;
  cfg.corrupt_bounds = self_test;
  if (!config_path.empty()) {
    pimdp::KvReader kv(pimdp::parse_kv_text(slurp(config_path)));
    cfg.n_instances = static_cast<int>(kv.integer("theory.instances", cfg.n_instances));
    seed = static_cast<std::uint64_t>(kv.integer("theory.seed", static_cast<long>(seed)));
    cfg.max_states = static_cast<int>(kv.integer("theory.max_states", cfg.max_states));
    cfg.max_actions = static_cast<int>(kv.integer("theory.max_actions", cfg.max_actions));
    cfg.corrupt_bounds = kv.boolean("theory.self_test", cfg.corrupt_bounds);
    kv.reject_unknown();
  }
  const pimdp::TheoryReport report = pimdp::run_theory_suite(cfg, seed);
  if (!out.empty()) pimdp::write_theory_file(out, report.rows);
  int failures = 0;
  for (const auto& r : report.rows)
    if (!r.pass) ++failures;
  std::cout << "instances " << report.rows.size() << " failures " << failures
            << " worst_affinity " << report.worst_affinity << " worst_slack "
            << report.worst_slack << " worst_oracle_gap " << report.worst_oracle_gap
            << " worst_contraction_excess " << report.worst_contraction_excess << "\n";
  std::cout << (report.all_pass ? "PASS" : "FAIL") << "\n";
  return report.all_pass ? kExitOk : kExitVerification;
}

int cmd_sweep(const std::string& config_path, const std::string& axis_spec, long seed_offset,
              int workers, const std::string& out) {
  const std::string text = slurp(config_path);
  const pimdp::SweepAxis axis =
      axis_spec.empty() ? pimdp::SweepAxis{} : pimdp::parse_sweep_axis(axis_spec);
  const std::vector<pimdp::ExperimentConfig> configs = pimdp::expand_sweep(text, axis);
  std::vector<pimdp::RunArtifact> all;
  std::string root;
  for (const auto& cfg : configs) {
    const pimdp::ExperimentSummary s = pimdp::run_experiment(cfg, seed_offset, workers, out);
    all.insert(all.end(), s.artifacts.begin(), s.artifacts.end());
    root = (out.empty() ? cfg.out_dir : out);
    std::cout << cfg.name << ": " << s.seeds.size() << " runs\n";
  }
  pimdp::write_manifest(root, text, all);
  std::cout << "sweep: " << configs.size() << " configs, " << all.size() << " artifacts\n";
  return kExitOk;
}

int cmd_plot_curves(const std::vector<std::string>& series_specs,
                    const std::vector<std::string>& csvs, const std::string& column,
                    const std::string& out) {
  auto extract = [&](const std::vector<std::string>& paths) {
    // Per-step mean and standard error across seed files.
    std::vector<std::vector<pimdp::MetricsRow>> runs;
    for (const auto& p : paths) runs.push_back(pimdp::read_metrics_file(p));
    std::vector<pimdp::CurvePoint> pts;
    auto value_of = [&](const pimdp::MetricsRow& r) {
      if (column == "eval_return_mean") return r.eval_return_mean;
      if (column == "train_return") return r.train_return;
      if (column == "gate_rate") return r.gate_rate;
      if (column == "td_loss") return r.td_loss;
      throw pimdp::ConfigError("plot: unknown column " + column);
    };
    // Collect the step grid from the first run (rows where the column is set).
    std::vector<long> steps;
    for (const auto& r : runs[0])
      if (!std::isnan(value_of(r))) steps.push_back(r.step);
    for (const auto& run : runs) {
      std::vector<long> s2;
      for (const auto& r : run)
        if (!std::isnan(value_of(r))) s2.push_back(r.step);
      if (s2 != steps) throw pimdp::ConfigError("plot: mismatched step grids across seeds");
    }
    for (std::size_t i = 0; i < steps.size(); ++i) {
      std::vector<double> vals;
      for (const auto& run : runs)
        for (const auto& r : run)
          if (r.step == steps[i] && !std::isnan(value_of(r))) vals.push_back(value_of(r));
      double mean = 0.0;
      for (double v : vals) mean += v;
      mean /= static_cast<double>(vals.size());
      double var = 0.0;
      for (double v : vals) var += (v - mean) * (v - mean);
      const double se = vals.size() > 1 ? std::sqrt(var / (vals.size() - 1)) /
                                              std::sqrt(static_cast<double>(vals.size()))
                                        : 0.0;
      pts.push_back({static_cast<double>(steps[i]), mean, se});
    }
    return pts;
  };

  std::vector<pimdp::CurveSeries> series;
  if (!series_specs.empty()) {
    for (const auto& spec : series_specs) {
      const auto eq = spec.find('=');
      if (eq == std::string::npos)
        throw pimdp::ConfigError("plot: --series expects label=path[;path...]");
      pimdp::CurveSeries s;
      s.name = spec.substr(0, eq);
      std::vector<std::string> paths;
      std::string item;
      std::istringstream is(spec.substr(eq + 1));
      while (std::getline(is, item, ';')) paths.push_back(item);
      if (paths.empty()) throw pimdp::ConfigError("plot: empty series " + s.name);
      s.points = extract(paths);
      series.push_back(std::move(s));
    }
  } else {
    if (csvs.empty()) throw pimdp::ConfigError("plot: no input CSVs");
    pimdp::CurveSeries s;
    s.name = column;
    s.points = extract(csvs);
    series.push_back(std::move(s));
  }
  pimdp::write_text_file(out, pimdp::svg_curves(column, "step", column, series));
  std::cout << "wrote " << out << "\n";
  return kExitOk;
}

int cmd_plot_heatmap(const std::string& layout_path, const std::string& goal_spec, int rotation,
                     const std::string& out) {
  pimdp::GridSpec spec = pimdp::layout_from_text(slurp(layout_path));
  int goal = -1;
  if (!goal_spec.empty()) {
    int gx, gy;
    char comma;
    std::istringstream is(goal_spec);
    if (!(is >> gx >> comma >> gy) || comma != ',')
      throw pimdp::ConfigError("plot: --goal expects x,y");
    goal = pimdp::grid_cell_index(gx, gy, spec.size);
  } else {
    const int c = spec.size / 2;
    goal = pimdp::grid_cell_index(c, c, spec.size);
    while (!spec.free_cell(goal)) ++goal;
  }
  if (rotation < 1 || rotation > 3) throw pimdp::ConfigError("plot: --rotation in {1,2,3}");

  const pimdp::TabularMDP mdp = pimdp::grid_to_tabular(spec, goal);
  const pimdp::QTable q = pimdp::value_iteration(mdp).q;
  const Eigen::VectorXd v = q.q.rowwise().maxCoeff();
  const pimdp::PermutationAction act = pimdp::c4_grid_action(spec.size);
  const auto errs = pimdp::equivariance_error_map(v, act, rotation);
  Eigen::MatrixXd grid(spec.size, spec.size);
  std::vector<std::pair<int, int>> marks;
  for (int s = 0; s < spec.size * spec.size; ++s) {
    auto [x, y] = pimdp::grid_cell_xy(s, spec.size);
    grid(x, y) = errs[s].error;
    if (spec.obstacles.count(s)) marks.emplace_back(x, y);
  }
  pimdp::write_text_file(out, pimdp::svg_heatmap("relative equivariance error", grid, marks));
  std::cout << "wrote " << out << "\n";
  return kExitOk;
}

int cmd_layout(int size, int obstacles, std::uint64_t seed, bool penalty,
               const std::string& inspect, const std::string& out) {
  if (!inspect.empty()) {
    const pimdp::GridSpec spec = pimdp::layout_from_text(slurp(inspect));
    std::cout << "size " << spec.size << " obstacles " << spec.obstacles.size() << " penalty "
              << spec.penalty_cells.size() << " connected "
              << (pimdp::grid_connected(spec) ? "yes" : "no") << "\n";
    return kExitOk;
  }
  const pimdp::GridSpec spec = pimdp::random_layout(size, obstacles, seed, penalty);
  const std::string text = pimdp::layout_to_text(spec);
  if (out.empty())
    std::cout << text;
  else {
    pimdp::write_text_file(out, text);
    std::cout << "wrote " << out << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"partially-equivariant RL laboratory"};
  app.require_subcommand(1);

  std::string config_path, out, axis_spec, column = "eval_return_mean";
  std::string kind = "curves", layout_path, goal_spec, inspect;
  std::vector<std::string> series_specs, csvs;
  long seed_offset = 0;
  int workers = 1, instances = 200, rotation = 1, size = 15, obstacles = 20;
  std::uint64_t seed = 1;
  bool self_test = false, penalty = false;

  auto* run = app.add_subcommand("run", "execute all seeds of one configuration");
  run->add_option("--config", config_path)->required();
  run->add_option("--seed-offset", seed_offset);
  run->add_option("--workers", workers);
  run->add_option("--out", out);

  auto* verify = app.add_subcommand("verify-theory", "randomized checks of the tabular bounds");
  verify->add_option("--config", config_path);
  verify->add_option("--instances", instances);
  verify->add_option("--seed", seed);
  verify->add_flag("--self-test", self_test, "corrupt the bounds to prove the checker trips");
  verify->add_option("--out", out, "per-instance CSV path");

  auto* sweep = app.add_subcommand("sweep", "cartesian expansion over one config axis");
  sweep->add_option("--config", config_path)->required();
  sweep->add_option("--axis", axis_spec, "key=v1,v2,...");
  sweep->add_option("--seed-offset", seed_offset);
  sweep->add_option("--workers", workers);
  sweep->add_option("--out", out);

  auto* plot = app.add_subcommand("plot", "emit SVG charts from metrics or layouts");
  plot->add_option("--kind", kind, "curves | heatmap");
  plot->add_option("--series", series_specs, "label=path[;path...] (repeatable)");
  plot->add_option("--column", column);
  plot->add_option("--layout", layout_path);
  plot->add_option("--goal", goal_spec, "x,y");
  plot->add_option("--rotation", rotation);
  plot->add_option("--out", out)->required();
  plot->add_option("csvs", csvs, "metrics CSV files");

  auto* layout = app.add_subcommand("layout", "generate or inspect board layouts");
  layout->add_option("--size", size);
  layout->add_option("--obstacles", obstacles);
  layout->add_option("--seed", seed);
  layout->add_flag("--penalty", penalty);
  layout->add_option("--inspect", inspect);
  layout->add_option("--out", out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (run->parsed()) return cmd_run(config_path, seed_offset, workers, out);
    if (verify->parsed()) return cmd_verify_theory(config_path, instances, seed, self_test, out);
    if (sweep->parsed()) return cmd_sweep(config_path, axis_spec, seed_offset, workers, out);
    if (plot->parsed()) {
      if (kind == "curves") return cmd_plot_curves(series_specs, csvs, column, out);
      if (kind == "heatmap") return cmd_plot_heatmap(layout_path, goal_spec, rotation, out);
      throw pimdp::ConfigError("plot: unknown kind " + kind);
    }
    if (layout->parsed())
      return cmd_layout(size, obstacles, seed, penalty, inspect, out);
  } catch (const pimdp::WatchdogError& e) {
    std::cerr << "watchdog: " << e.what() << "\n";
    return kExitWatchdog;
  } catch (const pimdp::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitOk;
}
