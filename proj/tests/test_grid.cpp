#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "pimdp/grid.hpp"
#include "pimdp/rng.hpp"
#include "pimdp/tabular.hpp"

using namespace pimdp;

TEST_CASE("random_layout basics") {
  const GridSpec empty = random_layout(15, 0, 1);
  CHECK(empty.obstacles.empty());
  CHECK(grid_connected(empty));

  const GridSpec a = random_layout(15, 40, 12345);
  const GridSpec b = random_layout(15, 40, 12345);
  CHECK(a.obstacles == b.obstacles);
  CHECK(static_cast<int>(a.obstacles.size()) == 40);
  CHECK(grid_connected(a));

  const GridSpec c = random_layout(15, 40, 54321);
  CHECK(a.obstacles != c.obstacles);

  const GridSpec pen = random_layout(15, 30, 7, /*penalty_variant=*/true);
  CHECK(static_cast<int>(pen.obstacles.size()) == 15);
  CHECK(static_cast<int>(pen.penalty_cells.size()) == 15);
  CHECK(grid_connected(pen));

  CHECK_THROWS_AS((void)random_layout(3, 9, 1), std::invalid_argument);
}

TEST_CASE("layout text round trip") {
  GridSpec spec;
  spec.size = 7;
  spec.obstacles = {grid_cell_index(1, 2, 7), grid_cell_index(4, 4, 7)};
  spec.penalty_cells = {grid_cell_index(0, 6, 7)};
  const GridSpec back = layout_from_text(layout_to_text(spec));
  CHECK(back.size == 7);
  CHECK(back.obstacles == spec.obstacles);
  CHECK(back.penalty_cells == spec.penalty_cells);

  CHECK_THROWS(layout_from_text("obstacle 1 1\nsize 7\n"));
  CHECK_THROWS(layout_from_text("size 7\nwall 1 1\n"));
  CHECK_THROWS(layout_from_text("size 7\nobstacle 9 0\n"));
}

TEST_CASE("reset: seeded determinism and infeasible placement") {
  GridSpec spec;
  spec.size = 15;
  GridWorld env(spec);
  Rng r1(99), r2(99);
  const Eigen::Vector4d o1 = env.reset(r1);
  GridWorld env2(spec);
  const Eigen::Vector4d o2 = env2.reset(r2);
  CHECK((o1 - o2).cwiseAbs().maxCoeff() == 0.0);
  CHECK(env.state().agent != env.state().goal);

  // Only one free cell: the goal cannot be placed.
  GridSpec tight;
  tight.size = 3;
  for (int c = 1; c < 9; ++c) tight.obstacles.insert(c);
  GridWorld cramped(tight);
  Rng r3(1);
  CHECK_THROWS_AS((void)cramped.reset(r3), std::runtime_error);
}

TEST_CASE("step semantics: goal, obstacle bump, penalty, centred observation") {
  GridSpec spec;
  spec.size = 5;
  spec.obstacles = {grid_cell_index(2, 3, 5)};
  spec.penalty_cells = {grid_cell_index(3, 2, 5)};
  GridWorld env(spec);
  Rng rng(4);
  // Drive the state to a known configuration: resample until agent at (2,2).
  while (true) {
    env.reset(rng);
    auto [ax, ay] = grid_cell_xy(env.state().agent, 5);
    auto [gx, gy] = grid_cell_xy(env.state().goal, 5);
    if (ax == 2 && ay == 2 && !(gx == 2 && gy == 1) && !(gx == 3 && gy == 2)) break;
  }
  const Eigen::Vector4d obs = env.observation();
  CHECK(obs(0) == doctest::Approx(0.0));  // (2,2) centred on a 5x5 board
  CHECK(obs(1) == doctest::Approx(0.0));

  // Action 0 is +y (up): blocked by the obstacle at (2,3) -> stay, -0.01.
  GridStepResult up = env.step(0, rng);
  CHECK(env.state().agent == grid_cell_index(2, 2, 5));
  CHECK(up.reward == doctest::Approx(-0.01));
  CHECK_FALSE(up.done);

  // Action 3 is +x (right): penalty cell (3,2) -> -0.01 - 0.5.
  GridStepResult right = env.step(3, rng);
  CHECK(env.state().agent == grid_cell_index(3, 2, 5));
  CHECK(right.reward == doctest::Approx(-0.51));

  CHECK_THROWS_AS((void)env.step(4, rng), std::out_of_range);
}

TEST_CASE("reaching the goal pays +1 and terminates") {
  GridSpec spec;
  spec.size = 5;
  GridWorld env(spec);
  Rng rng(8);
  env.reset(rng);
  // Walk greedily along BFS distances to the goal.
  const std::vector<int> dist = grid_bfs_distances(spec, env.state().goal);
  for (int step = 0; step < 50; ++step) {
    const int s = env.state().agent;
    auto [x, y] = grid_cell_xy(s, 5);
    int best = -1;
    for (int d = 0; d < 4; ++d) {
      const int nx = x + kGridDirX[d], ny = y + kGridDirY[d];
      if (spec.blocked(nx, ny)) continue;
      if (dist[grid_cell_index(nx, ny, 5)] == dist[s] - 1) {
        best = d;
        break;
      }
    }
    REQUIRE(best >= 0);
    const GridStepResult res = env.step(best, rng);
    if (res.done) {
      CHECK(res.terminal);
      CHECK(res.reward == doctest::Approx(1.0));
      return;
    }
    CHECK(res.reward == doctest::Approx(-0.01));
  }
  FAIL("never reached the goal");
}

TEST_CASE("episode cap ends the episode without terminal") {
  GridSpec spec;
  spec.size = 5;
  spec.episode_cap = 3;
  GridWorld env(spec);
  Rng rng(2);
  int ax = 0, ay = 0;
  while (true) {
    env.reset(rng);
    std::tie(ax, ay) = grid_cell_xy(env.state().agent, 5);
    auto [gx, gy] = grid_cell_xy(env.state().goal, 5);
    const bool boundary = ax == 0 || ax == 4 || ay == 0 || ay == 4;
    if (boundary && std::abs(ax - gx) + std::abs(ay - gy) > 1) break;
  }
  // Bump the board edge three times: the agent never moves.
  const int push = ax == 0 ? 1 : ax == 4 ? 3 : ay == 0 ? 2 : 0;
  GridStepResult res{};
  for (int k = 0; k < 3; ++k) res = env.step(push, rng);
  CHECK(res.done);
  CHECK_FALSE(res.terminal);
  CHECK(env.state().agent == grid_cell_index(ax, ay, 5));
}

TEST_CASE("deterministic tabular kernels are one-hot; slip rows split 0.65/0.35") {
  GridSpec det;
  det.size = 5;
  const int goal = grid_cell_index(0, 0, 5);
  const TabularMDP m = grid_to_tabular(det, goal);
  CHECK(m.valid(1e-12));
  for (int s = 0; s < 25; ++s)
    for (int a = 0; a < 4; ++a) CHECK(m.transition[a].row(s).maxCoeff() == doctest::Approx(1.0));

  GridSpec slip = det;
  slip.slip = SlipModel{};
  const TabularMDP ms = grid_to_tabular(slip, goal);
  CHECK(ms.valid(1e-12));
  // Interior cell (2,2): all four one-step outcomes distinct.
  const int s = grid_cell_index(2, 2, 5);
  const Eigen::VectorXd row = ms.transition[0].row(s);
  std::multiset<double> nonzero;
  for (int s2 = 0; s2 < 25; ++s2)
    if (row(s2) > 0) nonzero.insert(row(s2));
  CHECK(nonzero.size() == 4);
  CHECK(*nonzero.rbegin() == doctest::Approx(0.65));
  CHECK(*nonzero.begin() == doctest::Approx(0.35 / 3.0));
}

TEST_CASE("Monte-Carlo frequencies match the tabular slip kernel") {
  GridSpec spec;
  spec.size = 5;
  spec.slip = SlipModel{};
  const Rng frozen(77);
  GridWorld probe(spec);
  {
    Rng r = frozen;
    probe.reset(r);
  }
  const int start = probe.state().agent;
  const int goal = probe.state().goal;
  const TabularMDP m = grid_to_tabular(spec, goal);
  const int action = 1;
  const int n_trials = 20000;
  std::map<int, int> counts;
  Rng slip_rng(555);
  for (int t = 0; t < n_trials; ++t) {
    GridWorld env(spec);
    Rng r = frozen;
    env.reset(r);
    env.step(action, slip_rng);
    ++counts[env.state().agent];
  }
  for (int s2 = 0; s2 < 25; ++s2) {
    const double p = m.transition[action](start, s2);
    const double freq = counts.count(s2) ? counts[s2] / static_cast<double>(n_trials) : 0.0;
    const double se = std::sqrt(std::max(p * (1.0 - p), 1e-9) / n_trials);
    CHECK(std::abs(freq - p) <= 3.0 * se + 1e-12);
  }
}

TEST_CASE("empty joint grid is exactly C4-invariant") {
  GridSpec spec;
  spec.size = 5;
  const TabularMDP mdp_n = grid_to_tabular_joint(spec);
  const PermutationAction act = c4_joint_grid_action(5);
  const TabularMDP mdp_e = build_group_invariant(mdp_n, act);
  CHECK((mdp_e.reward - mdp_n.reward).cwiseAbs().maxCoeff() < 1e-12);
  for (int a = 0; a < 4; ++a)
    CHECK((mdp_e.transition[a] - mdp_n.transition[a]).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sparse joint discrepancies match the dense oracle") {
  GridSpec spec;
  spec.size = 5;
  spec.obstacles = {grid_cell_index(1, 3, 5), grid_cell_index(3, 0, 5)};
  const double gamma = 0.99;
  const TabularMDP mdp_n = grid_to_tabular_joint(spec);
  const PermutationAction act = c4_joint_grid_action(5);
  const TabularMDP mdp_e = build_group_invariant(mdp_n, act);
  const JointDiscrepancies jd = grid_joint_discrepancies(spec, gamma);
  double max_delta = 0.0;
  for (int s = 0; s < mdp_n.n_states; ++s)
    for (int a = 0; a < 4; ++a) {
      CHECK(jd.eps_r(s, a) == doctest::Approx(epsilon_r(mdp_n, mdp_e, s, a)).epsilon(1e-10));
      CHECK(jd.eps_p(s, a) == doctest::Approx(epsilon_p(mdp_n, mdp_e, s, a)).epsilon(1e-10));
      CHECK(jd.delta(s, a) == doctest::Approx(delta(mdp_n, mdp_e, s, a)).epsilon(1e-10));
      max_delta = std::max(max_delta, jd.delta(s, a));
    }
  CHECK(max_delta > 0.0);

  // Empty board: no symmetry breaking anywhere.
  GridSpec empty;
  empty.size = 5;
  const JointDiscrepancies none = grid_joint_discrepancies(empty, gamma);
  CHECK(none.delta.maxCoeff() < 1e-12);
}

TEST_CASE("delta support is confined to obstacle-orbit neighborhoods") {
  GridSpec spec;
  spec.size = 5;
  const int obstacle = grid_cell_index(1, 3, 5);
  spec.obstacles = {obstacle};
  const PermutationAction cell = c4_grid_action(5);
  const JointDiscrepancies jd = grid_joint_discrepancies(spec);
  // Cells whose one-step fan can differ: the obstacle orbit and its 4-neighbours.
  std::set<int> hot;
  for (int g = 0; g < 4; ++g) {
    const int oc = cell.state[g][obstacle];
    hot.insert(oc);
    auto [x, y] = grid_cell_xy(oc, 5);
    for (int d = 0; d < 4; ++d) {
      const int nx = x + kGridDirX[d], ny = y + kGridDirY[d];
      if (nx >= 0 && nx < 5 && ny >= 0 && ny < 5) hot.insert(grid_cell_index(nx, ny, 5));
    }
  }
  for (int agent = 0; agent < 25; ++agent)
    for (int goal = 0; goal < 25; ++goal)
      for (int a = 0; a < 4; ++a)
        if (jd.delta(agent * 25 + goal, a) > 1e-12)
          CHECK(hot.count(agent) == 1);
}
