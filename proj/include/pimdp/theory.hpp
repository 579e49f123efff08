#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pimdp/rng.hpp"
#include "pimdp/tabular.hpp"

namespace pimdp {

// Randomized verification of the tabular identities and bounds on a corpus of
// partially invariant instances. Every check is an inequality with an explicit
// tolerance; `corrupt_bounds` deliberately breaks the reported bounds so a
// test can confirm the checker is not vacuous.
struct TheoryConfig {
  int n_instances = 200;
  int max_states = 30;
  int max_actions = 4;
  double vi_tol = 1e-10;
  double affinity_tol = 1e-12;
  double slack_tol = -1e-6;  // slacks must be >= this
  double oracle_tol = 1e-6;
  double contraction_tol = 1e-12;  // ratio <= gamma + this
  int contraction_trials = 3;
  bool corrupt_bounds = false;
};

struct TheoryRow {
  int instance_id = 0;
  std::uint64_t seed = 0;
  double gap = 0.0;     // ||Q*_N - Q*_E||
  double bound = 0.0;   // sup delta / (1-gamma)
  double slack = 0.0;   // minimum slack over all inequality checks
  double affinity_residual = 0.0;
  double contraction_ratio = 0.0;
  bool pass = false;
};

struct TheoryReport {
  std::vector<TheoryRow> rows;
  bool all_pass = true;
  double worst_affinity = 0.0;
  double worst_slack = std::numeric_limits<double>::infinity();
  double worst_oracle_gap = 0.0;
  double worst_contraction_excess = -std::numeric_limits<double>::infinity();
};

inline TheoryReport run_theory_suite(const TheoryConfig& cfg, std::uint64_t seed) {
  TheoryReport report;
  Rng rng = named_stream(seed, "theory");
  for (int i = 0; i < cfg.n_instances; ++i) {
    const int n_states = 3 + rng.uniform_int(cfg.max_states - 2);
    const int n_actions = 2 + rng.uniform_int(cfg.max_actions - 1);
    const int group_order = rng.bernoulli(0.5) ? 2 : 4;
    const double gamma = rng.bernoulli(0.5) ? 0.9 : 0.99;
    const int n_broken = rng.uniform_int(std::max(1, n_states * n_actions / 4));

    PartiallyInvariantInstance inst =
        random_partially_invariant(n_states, n_actions, group_order, gamma, n_broken, rng);

    GateTable gate = GateTable::constant(n_states, n_actions, 0.0);
    for (int s = 0; s < n_states; ++s)
      for (int a = 0; a < n_actions; ++a) gate.lambda(s, a) = rng.uniform01();
    QTable q = QTable::zeros(n_states, n_actions);
    const double v_max = inst.mdp_n.v_max();
    for (int s = 0; s < n_states; ++s)
      for (int a = 0; a < n_actions; ++a) q.q(s, a) = rng.uniform(-v_max, v_max);

    TheoryRow row;
    row.instance_id = i;
    row.seed = seed;
    row.affinity_residual = verify_affinity(inst.mdp_n, inst.mdp_e, gate, q);

    const double one_step_slack = verify_one_step_bound(inst.mdp_n, inst.mdp_e, q);

    GapBound vg = verify_value_gap(inst.mdp_n, inst.mdp_e, cfg.vi_tol);
    GapBound px = verify_proximity(inst.mdp_n, inst.mdp_e, gate, cfg.vi_tol);
    if (cfg.corrupt_bounds) {
      vg.bound = vg.gap - 1.0;
      px.bound = px.gap - 1.0;
    }
    row.gap = vg.gap;
    row.bound = vg.bound;

    const GateTable oracle = oracle_gate(inst.mdp_n, inst.mdp_e);
    const GapBound recovery = verify_proximity(inst.mdp_n, inst.mdp_e, oracle, cfg.vi_tol);

    Rng crng = named_stream(seed, "theory-contraction");
    row.contraction_ratio = contraction_estimate(inst.mdp_n, cfg.contraction_trials, crng, v_max);

    row.slack = std::min({one_step_slack, vg.bound - vg.gap, px.bound - px.gap});
    const bool pass_affinity = row.affinity_residual <= cfg.affinity_tol;
    const bool pass_slack = row.slack >= cfg.slack_tol;
    const bool pass_oracle = recovery.gap <= cfg.oracle_tol;
    const bool pass_contraction = row.contraction_ratio <= gamma + cfg.contraction_tol;
    row.pass = pass_affinity && pass_slack && pass_oracle && pass_contraction;

    report.all_pass = report.all_pass && row.pass;
    report.worst_affinity = std::max(report.worst_affinity, row.affinity_residual);
    report.worst_slack = std::min(report.worst_slack, row.slack);
    report.worst_oracle_gap = std::max(report.worst_oracle_gap, recovery.gap);
    report.worst_contraction_excess =
        std::max(report.worst_contraction_excess, row.contraction_ratio - gamma);
    report.rows.push_back(row);
  }
  return report;
}

inline const char* kTheoryHeader =
    "instance_id,seed,gap,bound,slack,affinity_residual,contraction_ratio,pass";

inline std::string theory_to_csv(const std::vector<TheoryRow>& rows) {
  std::ostringstream os;
  os << kTheoryHeader << "\n";
  char buf[40];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (const auto& r : rows) {
    os << r.instance_id << ',' << r.seed << ',' << fmt(r.gap) << ',' << fmt(r.bound) << ','
       << fmt(r.slack) << ',' << fmt(r.affinity_residual) << ',' << fmt(r.contraction_ratio)
       << ',' << (r.pass ? 1 : 0) << "\n";
  }
  return os.str();
}

inline void write_theory_file(const std::string& path, const std::vector<TheoryRow>& rows) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << theory_to_csv(rows);
}

}  // namespace pimdp
