#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "pimdp/grid.hpp"
#include "pimdp/rng.hpp"
#include "pimdp/tabular.hpp"

using namespace pimdp;

namespace {

TabularMDP tiny_two_state(double gamma) {
  TabularMDP m;
  m.n_states = 2;
  m.n_actions = 1;
  m.gamma = gamma;
  m.reward.resize(2, 1);
  m.reward << 1.0, 0.25;
  m.transition.assign(1, Eigen::MatrixXd(2, 2));
  m.transition[0] << 1.0, 0.0, 0.0, 1.0;
  return m;
}

bool mdp_close(const TabularMDP& a, const TabularMDP& b, double tol) {
  if ((a.reward - b.reward).cwiseAbs().maxCoeff() > tol) return false;
  for (int k = 0; k < a.n_actions; ++k)
    if ((a.transition[k] - b.transition[k]).cwiseAbs().maxCoeff() > tol) return false;
  return true;
}

}  // namespace

TEST_CASE("group averaging: identity action leaves the MDP unchanged") {
  Rng rng(7);
  const TabularMDP m = random_mdp(6, 3, 0.9, rng);
  PermutationAction act;
  act.group = FiniteGroup::trivial();
  act.state.assign(1, std::vector<int>(6));
  act.action.assign(1, std::vector<int>(3));
  for (int s = 0; s < 6; ++s) act.state[0][s] = s;
  for (int a = 0; a < 3; ++a) act.action[0][a] = a;
  const TabularMDP avg = build_group_invariant(m, act);
  CHECK(mdp_close(avg, m, 0.0));
}

TEST_CASE("group averaging: 3x3 obstacle grid under C4") {
  GridSpec spec;
  spec.size = 3;
  spec.obstacles = {grid_cell_index(0, 1, 3)};
  const int goal = grid_cell_index(1, 1, 3);
  const TabularMDP mdp_n = grid_to_tabular(spec, goal);
  const PermutationAction act = c4_grid_action(3);
  const TabularMDP mdp_e = build_group_invariant(mdp_n, act);
  CHECK(mdp_e.valid(1e-9));

  // Brute-force 4-term average oracle.
  for (int s = 0; s < 9; ++s)
    for (int a = 0; a < 4; ++a) {
      double r = 0.0;
      for (int g = 0; g < 4; ++g) r += mdp_n.reward(act.state[g][s], act.action[g][a]);
      CHECK(mdp_e.reward(s, a) == doctest::Approx(r / 4.0).epsilon(1e-12));
      for (int s2 = 0; s2 < 9; ++s2) {
        double p = 0.0;
        for (int g = 0; g < 4; ++g)
          p += mdp_n.transition[act.action[g][a]](act.state[g][s], act.state[g][s2]);
        CHECK(mdp_e.transition[a](s, s2) == doctest::Approx(p / 4.0).epsilon(1e-12));
      }
    }

  // Exhaustive invariance: R_E(gs, ga) = R_E(s, a), same for kernels.
  for (int g = 0; g < 4; ++g)
    for (int s = 0; s < 9; ++s)
      for (int a = 0; a < 4; ++a) {
        const int gs = act.state[g][s];
        const int ga = act.action[g][a];
        CHECK(std::abs(mdp_e.reward(gs, ga) - mdp_e.reward(s, a)) < 1e-12);
        for (int s2 = 0; s2 < 9; ++s2)
          CHECK(std::abs(mdp_e.transition[ga](gs, act.state[g][s2]) - mdp_e.transition[a](s, s2)) <
                1e-12);
      }

  // Averaging is idempotent.
  CHECK(mdp_close(build_group_invariant(mdp_e, act), mdp_e, 1e-12));
}

TEST_CASE("pointwise discrepancies") {
  TabularMDP mdp_n = tiny_two_state(0.5);
  TabularMDP mdp_e = mdp_n;
  CHECK(epsilon_r(mdp_n, mdp_e, 0, 0) == 0.0);
  CHECK(epsilon_p(mdp_n, mdp_e, 0, 0) == 0.0);

  // P_N row [1,0] vs P_E row [0.5,0.5] -> eps_P = 0.5; R 1 vs 0.25 -> eps_R = 0.75.
  mdp_e.reward(0, 0) = 0.25;
  mdp_e.transition[0].row(0) << 0.5, 0.5;
  CHECK(epsilon_p(mdp_n, mdp_e, 0, 0) == doctest::Approx(0.5));
  CHECK(epsilon_r(mdp_n, mdp_e, 0, 0) == doctest::Approx(0.75));
  // delta = 0.75 + 2*0.5*V_max*0.5 with V_max = 1/(1-0.5) = 2 -> 1.75.
  CHECK(mdp_n.v_max() == doctest::Approx(2.0));
  CHECK(delta(mdp_n, mdp_e, 0, 0) == doctest::Approx(1.75));
  CHECK(delta_table(mdp_n, mdp_e)(0, 0) == doctest::Approx(1.75));
  CHECK(delta_table(mdp_n, mdp_e)(1, 0) == doctest::Approx(0.0));
}

TEST_CASE("gated mixture MDP") {
  Rng rng(11);
  const TabularMDP mdp_n = random_mdp(4, 2, 0.9, rng);
  const TabularMDP mdp_e = random_mdp(4, 2, 0.9, rng);

  CHECK(mdp_close(build_pi_mdp(mdp_n, mdp_e, GateTable::constant(4, 2, 1.0)), mdp_n, 0.0));
  CHECK(mdp_close(build_pi_mdp(mdp_n, mdp_e, GateTable::constant(4, 2, 0.0)), mdp_e, 0.0));

  GateTable g = GateTable::constant(4, 2, 0.0);
  g.lambda(2, 1) = 0.5;
  const TabularMDP mdp_h = build_pi_mdp(mdp_n, mdp_e, g);
  CHECK((mdp_h.transition[1].row(2) -
         0.5 * (mdp_n.transition[1].row(2) + mdp_e.transition[1].row(2)))
            .cwiseAbs()
            .maxCoeff() < 1e-15);
  CHECK(mdp_h.reward(2, 1) == doctest::Approx(0.5 * (mdp_n.reward(2, 1) + mdp_e.reward(2, 1))));

  GateTable bad = GateTable::constant(4, 2, 1.5);
  CHECK_THROWS_AS((void)build_pi_mdp(mdp_n, mdp_e, bad), std::invalid_argument);
}

TEST_CASE("Bellman backups: pinned scalars") {
  TabularMDP m;
  m.n_states = 1;
  m.n_actions = 1;
  m.gamma = 0.5;
  m.reward = Eigen::MatrixXd::Constant(1, 1, 1.0);
  m.transition.assign(1, Eigen::MatrixXd::Constant(1, 1, 1.0));
  QTable q = QTable::zeros(1, 1);
  CHECK(bellman_hard_backup(m, q).q(0, 0) == doctest::Approx(1.0));

  // Zero reward, zero Q -> zero backup.
  m.reward.setZero();
  CHECK(bellman_hard_backup(m, q).q(0, 0) == 0.0);

  // Soft backup: two equal actions, Q = 0, alpha = 1 -> V = log 2.
  TabularMDP m2;
  m2.n_states = 1;
  m2.n_actions = 2;
  m2.gamma = 0.5;
  m2.reward = Eigen::MatrixXd::Zero(1, 2);
  m2.transition.assign(2, Eigen::MatrixXd::Constant(1, 1, 1.0));
  QTable q2 = QTable::zeros(1, 2);
  CHECK(bellman_soft_backup(m2, q2, 1.0).q(0, 0) == doctest::Approx(0.5 * std::log(2.0)));
  CHECK_THROWS_AS((void)bellman_soft_backup(m2, q2, 0.0), std::invalid_argument);
}

TEST_CASE("soft backup converges to the hard backup as alpha -> 0") {
  Rng rng(3);
  const TabularMDP m = random_mdp(5, 3, 0.9, rng);
  QTable q = QTable::zeros(5, 3);
  for (int s = 0; s < 5; ++s)
    for (int a = 0; a < 3; ++a) q.q(s, a) = rng.uniform(-1.0, 1.0);
  const QTable hard = bellman_hard_backup(m, q);
  const QTable soft = bellman_soft_backup(m, q, 1e-6);
  CHECK((hard.q - soft.q).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("value iteration against a BFS shortest-path oracle") {
  GridSpec spec;
  spec.size = 5;
  const int goal = grid_cell_index(2, 2, 5);
  const TabularMDP m = grid_to_tabular(spec, goal);
  const ValueIterationResult res = value_iteration(m, 1e-12);
  CHECK(res.converged);
  const Eigen::VectorXd v = res.q.q.rowwise().maxCoeff();
  const std::vector<int> dist = grid_bfs_distances(spec, goal);
  const double g = m.gamma;
  for (int s = 0; s < 25; ++s) {
    const int d = dist[s];
    if (d == 0) {
      CHECK(std::abs(v(s)) < 1e-9);
      continue;
    }
    // d-1 step penalties then the goal reward, all discounted.
    const double oracle =
        -0.01 * (1.0 - std::pow(g, d - 1)) / (1.0 - g) + std::pow(g, d - 1) * 1.0;
    CHECK(v(s) == doctest::Approx(oracle).epsilon(1e-8));
  }

  // R == 0 -> Q* == 0.
  TabularMDP zero = m;
  zero.reward.setZero();
  CHECK(value_iteration(zero, 1e-12).q.q.cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("affinity identity holds for arbitrary gates") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int ns = 2 + rng.uniform_int(6);
    const int na = 1 + rng.uniform_int(3);
    const TabularMDP mdp_n = random_mdp(ns, na, 0.95, rng);
    const TabularMDP mdp_e = random_mdp(ns, na, 0.95, rng);
    GateTable gate = GateTable::constant(ns, na, 0.0);
    for (int s = 0; s < ns; ++s)
      for (int a = 0; a < na; ++a) gate.lambda(s, a) = rng.uniform01();
    QTable q = QTable::zeros(ns, na);
    for (int s = 0; s < ns; ++s)
      for (int a = 0; a < na; ++a) q.q(s, a) = rng.uniform(-2.0, 2.0);
    CHECK(verify_affinity(mdp_n, mdp_e, gate, q) <= 1e-12);
  }
}

TEST_CASE("affinity residual is exactly zero at hard gates") {
  Rng rng(6);
  const TabularMDP mdp_n = random_mdp(4, 2, 0.9, rng);
  const TabularMDP mdp_e = random_mdp(4, 2, 0.9, rng);
  QTable q = QTable::zeros(4, 2);
  for (int s = 0; s < 4; ++s)
    for (int a = 0; a < 2; ++a) q.q(s, a) = rng.uniform(-1.0, 1.0);
  CHECK(verify_affinity(mdp_n, mdp_e, GateTable::constant(4, 2, 0.0), q) == 0.0);
  CHECK(verify_affinity(mdp_n, mdp_e, GateTable::constant(4, 2, 1.0), q) == 0.0);
}

TEST_CASE("one-step bound: randomized and crafted extremes") {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const int ns = 2 + rng.uniform_int(6);
    const int na = 1 + rng.uniform_int(3);
    const TabularMDP mdp_n = random_mdp(ns, na, 0.9, rng);
    const TabularMDP mdp_e = random_mdp(ns, na, 0.9, rng);
    QTable q = QTable::zeros(ns, na);
    for (int s = 0; s < ns; ++s)
      for (int a = 0; a < na; ++a) q.q(s, a) = rng.uniform(-1.0, 1.0);
    CHECK(verify_one_step_bound(mdp_n, mdp_e, q) >= -1e-9);
  }

  // Identical MDPs -> both sides zero, slack >= 0.
  const TabularMDP m = random_mdp(3, 2, 0.9, rng);
  QTable q0 = QTable::zeros(3, 2);
  CHECK(verify_one_step_bound(m, m, q0) >= 0.0);

  // Maximally different kernels, ||V_Q|| = 1, gamma = 0.9: rhs = 1.8 = lhs.
  TabularMDP mdp_n;
  mdp_n.n_states = 2;
  mdp_n.n_actions = 1;
  mdp_n.gamma = 0.9;
  mdp_n.reward = Eigen::MatrixXd::Zero(2, 1);
  mdp_n.transition.assign(1, Eigen::MatrixXd(2, 2));
  mdp_n.transition[0] << 1, 0, 0, 1;
  TabularMDP mdp_e = mdp_n;
  mdp_e.transition[0] << 0, 1, 1, 0;
  QTable q = QTable::zeros(2, 1);
  q.q << 1.0, -1.0;
  CHECK(epsilon_p(mdp_n, mdp_e, 0, 0) == doctest::Approx(1.0));
  const QTable tn = bellman_hard_backup(mdp_n, q);
  const QTable te = bellman_hard_backup(mdp_e, q);
  CHECK(std::abs(tn.q(0, 0) - te.q(0, 0)) == doctest::Approx(1.8));
  CHECK(verify_one_step_bound(mdp_n, mdp_e, q) >= -1e-12);
}

TEST_CASE("value gap bound: randomized suite and crafted gamma = 0.5 instance") {
  Rng rng(13);
  for (int trial = 0; trial < 40; ++trial) {
    const auto inst = random_partially_invariant(3 + rng.uniform_int(5), 2 + rng.uniform_int(2),
                                                 2, 0.9, 2, rng);
    const GapBound gb = verify_value_gap(inst.mdp_n, inst.mdp_e, 1e-10);
    CHECK(gb.gap <= gb.bound + 1e-8);
  }

  TabularMDP mdp_n = tiny_two_state(0.5);
  TabularMDP mdp_e = mdp_n;
  mdp_e.reward(0, 0) = 0.25;
  const GapBound gb = verify_value_gap(mdp_n, mdp_e, 1e-12);
  // 1/(1 - gamma) = 2, so the bound is twice the worst pointwise delta.
  CHECK(gb.bound == doctest::Approx(2.0 * delta_table(mdp_n, mdp_e).maxCoeff()));
  CHECK(gb.gap <= gb.bound + 1e-10);
  CHECK(gb.gap == doctest::Approx(1.5));  // |1 - 0.25| / (1 - 0.5) on the self-loop
}

TEST_CASE("proximity bound and oracle gate recovery") {
  Rng rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const auto inst = random_partially_invariant(4 + rng.uniform_int(4), 2, 4, 0.9, 3, rng);
    GateTable gate = GateTable::constant(inst.mdp_n.n_states, 2, 0.0);
    for (int s = 0; s < inst.mdp_n.n_states; ++s)
      for (int a = 0; a < 2; ++a) gate.lambda(s, a) = rng.uniform01();
    const GapBound gb = verify_proximity(inst.mdp_n, inst.mdp_e, gate, 1e-10);
    CHECK(gb.gap <= gb.bound + 1e-8);

    // Oracle gate routes every broken pair to M_N: M_H = M_N up to solver tol.
    const GateTable oracle = oracle_gate(inst.mdp_n, inst.mdp_e);
    const GapBound gbo = verify_proximity(inst.mdp_n, inst.mdp_e, oracle, 1e-10);
    CHECK(gbo.gap <= 1e-6);
  }

  // M_N = M_E -> zero everywhere.
  const TabularMDP m = random_mdp(4, 2, 0.9, rng);
  const GapBound same = verify_value_gap(m, m, 1e-12);
  CHECK(same.gap <= 1e-10);
  CHECK(same.bound <= 1e-10);

  // lambda == 1 -> M_H = M_N exactly.
  const TabularMDP m2 = random_mdp(4, 2, 0.9, rng);
  const GapBound prox1 = verify_proximity(m, m2, GateTable::constant(4, 2, 1.0), 1e-12);
  CHECK(prox1.gap <= 1e-10);
}

TEST_CASE("empirical contraction factor") {
  Rng rng(21);
  const TabularMDP m = random_mdp(6, 3, 0.99, rng);
  CHECK(contraction_estimate(m, 100, rng) <= 0.99 + 1e-12);

  TabularMDP flat = m;
  flat.gamma = 0.0;
  CHECK(contraction_estimate(flat, 10, rng) == 0.0);
}

TEST_CASE("equivariance error map") {
  const PermutationAction act = c4_grid_action(5);

  GridSpec sym;
  sym.size = 5;
  const int goal = grid_cell_index(2, 2, 5);
  const TabularMDP msym = grid_to_tabular(sym, goal);
  const Eigen::VectorXd vsym = value_iteration(msym, 1e-12).q.q.rowwise().maxCoeff();

  // Identity element -> all errors exactly zero.
  for (const auto& e : equivariance_error_map(vsym, act, 0)) CHECK(e.error == 0.0);
  // Symmetric layout, center goal -> rot90 errors vanish.
  for (const auto& e : equivariance_error_map(vsym, act, 1)) CHECK(e.error < 1e-8);

  // An obstacle next to the goal forces path detours and breaks the symmetry;
  // the worst relative error sits on the orbit-overlap cells: the obstacle
  // orbit and its immediate neighborhood, where shortest paths diverge.
  GridSpec broken = sym;
  const int obstacle = grid_cell_index(1, 2, 5);
  broken.obstacles = {obstacle};
  const TabularMDP mb = grid_to_tabular(broken, goal);
  const Eigen::VectorXd vb = value_iteration(mb, 1e-12).q.q.rowwise().maxCoeff();
  const auto errs = equivariance_error_map(vb, act, 1);
  int argmax = 0;
  for (int s = 1; s < 25; ++s)
    if (errs[s].error > errs[argmax].error) argmax = s;
  CHECK(errs[argmax].error > 1e-3);
  std::set<int> overlap;
  for (int g = 0; g < 4; ++g) {
    const int oc = act.state[g][obstacle];
    overlap.insert(oc);
    auto [x, y] = grid_cell_xy(oc, 5);
    for (int d = 0; d < 4; ++d) {
      const int nx = x + kGridDirX[d], ny = y + kGridDirY[d];
      if (nx >= 0 && nx < 5 && ny >= 0 && ny < 5) overlap.insert(grid_cell_index(nx, ny, 5));
    }
  }
  CHECK(overlap.count(argmax) == 1);
  // The max dominates the median cell error (which is zero here) five-fold.
  std::vector<double> all;
  for (const auto& e : errs) all.push_back(e.error);
  std::sort(all.begin(), all.end());
  CHECK(errs[argmax].error >= 5.0 * all[all.size() / 2]);
}

TEST_CASE("random instances are well formed") {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const TabularMDP m = random_mdp(5, 3, 0.95, rng);
    CHECK(m.valid(1e-9));
    const auto inst = random_partially_invariant(6, 3, 2, 0.9, 2, rng);
    CHECK(inst.mdp_n.valid(1e-9));
    CHECK(inst.mdp_e.valid(1e-9));
    // mdp_e is exactly invariant: averaging it again changes nothing.
    CHECK(mdp_close(build_group_invariant(inst.mdp_e, inst.action), inst.mdp_e, 1e-12));
  }
}
