#pragma once

#include <Eigen/Dense>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

#include "pimdp/rng.hpp"

namespace pimdp {

// Finite group given by its Cayley table. Elements are dense indices in
// [0, order); table(g,h) = g*h. Immutable after construction.
struct FiniteGroup {
  int order = 1;
  std::vector<int> table;    // row-major, order x order
  int identity = 0;
  std::vector<int> inverse;  // per element

  int compose(int g, int h) const {
    if (g < 0 || g >= order || h < 0 || h >= order)
      throw std::out_of_range("FiniteGroup::compose: element index out of range");
    return table[static_cast<std::size_t>(g) * order + h];
  }
  int inv(int g) const {
    if (g < 0 || g >= order) throw std::out_of_range("FiniteGroup::inv: element index out of range");
    return inverse[g];
  }

  static FiniteGroup trivial() { return cyclic(1); }

  static FiniteGroup cyclic(int n) {
    FiniteGroup g;
    g.order = n;
    g.table.resize(static_cast<std::size_t>(n) * n);
    g.inverse.resize(n);
    for (int a = 0; a < n; ++a) {
      for (int b = 0; b < n; ++b) g.table[static_cast<std::size_t>(a) * n + b] = (a + b) % n;
      g.inverse[a] = (n - a) % n;
    }
    g.identity = 0;
    return g;
  }

  // Z2 x Z2; element index encodes the pair (i, j) as 2*i + j.
  static FiniteGroup klein4() {
    FiniteGroup g;
    g.order = 4;
    g.table.resize(16);
    g.inverse.assign(4, 0);
    for (int a = 0; a < 4; ++a) {
      for (int b = 0; b < 4; ++b) g.table[static_cast<std::size_t>(a) * 4 + b] = a ^ b;
      g.inverse[a] = a;
    }
    g.identity = 0;
    return g;
  }
};

// Exhaustive check of closure, identity, inverses and associativity.
inline bool check_group_axioms(const FiniteGroup& g) {
  const int n = g.order;
  if (n <= 0 || static_cast<int>(g.table.size()) != n * n) return false;
  if (g.identity < 0 || g.identity >= n) return false;
  if (static_cast<int>(g.inverse.size()) != n) return false;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      const int ab = g.table[static_cast<std::size_t>(a) * n + b];
      if (ab < 0 || ab >= n) return false;
    }
  for (int a = 0; a < n; ++a) {
    if (g.compose(g.identity, a) != a || g.compose(a, g.identity) != a) return false;
    const int ia = g.inverse[a];
    if (ia < 0 || ia >= n) return false;
    if (g.compose(a, ia) != g.identity || g.compose(ia, a) != g.identity) return false;
  }
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      for (int c = 0; c < n; ++c)
        if (g.compose(g.compose(a, b), c) != g.compose(a, g.compose(b, c))) return false;
  return true;
}

// Group acting by permutations on tabular state and action index sets.
struct PermutationAction {
  FiniteGroup group;
  std::vector<std::vector<int>> state;   // [g][s] -> gs
  std::vector<std::vector<int>> action;  // [g][a] -> ga

  int n_states() const { return state.empty() ? 0 : static_cast<int>(state[0].size()); }
  int n_actions() const { return action.empty() ? 0 : static_cast<int>(action[0].size()); }

  int act_state(int g, int s) const {
    if (s < 0 || s >= n_states()) throw std::out_of_range("act_state: state outside space");
    return state.at(g)[s];
  }
  int act_action(int g, int a) const {
    if (a < 0 || a >= n_actions()) throw std::out_of_range("act_action: action outside space");
    return action.at(g)[a];
  }

  // Homomorphism, identity, bijectivity -- exhaustive.
  bool valid() const {
    const int n = group.order;
    if (static_cast<int>(state.size()) != n || static_cast<int>(action.size()) != n) return false;
    auto check_maps = [&](const std::vector<std::vector<int>>& maps) {
      const int m = static_cast<int>(maps[0].size());
      for (int g = 0; g < n; ++g) {
        if (static_cast<int>(maps[g].size()) != m) return false;
        std::vector<bool> hit(m, false);
        for (int x = 0; x < m; ++x) {
          const int y = maps[g][x];
          if (y < 0 || y >= m || hit[y]) return false;
          hit[y] = true;
        }
      }
      for (int x = 0; x < m; ++x)
        if (maps[group.identity][x] != x) return false;
      for (int g = 0; g < n; ++g)
        for (int h = 0; h < n; ++h)
          for (int x = 0; x < m; ++x)
            if (maps[group.compose(g, h)][x] != maps[g][maps[h][x]]) return false;
      return true;
    };
    return check_maps(state) && check_maps(action);
  }
};

// Group acting by invertible linear maps on observation and output vectors
// (used by the equivariant network wrapper).
struct LinearAction {
  FiniteGroup group;
  std::vector<Eigen::MatrixXd> in_rep;   // per element, acts on network input
  std::vector<Eigen::MatrixXd> out_rep;  // per element, acts on network output
};

// Mean over the group (uniform Haar measure for finite groups).
inline double haar_average(const std::vector<double>& per_element_values) {
  double s = 0.0;
  for (double v : per_element_values) s += v;
  return s / static_cast<double>(per_element_values.size());
}

// --- Grid-specific C4 constructions -----------------------------------------
//
// Cells of an N x N board are indexed s = x * N + y. rot90 acts about the
// board centre: (x, y) -> (y, N-1-x). Directions are indexed
// 0:up(0,+1) 1:left(-1,0) 2:down(0,-1) 3:right(+1,0); rot90 permutes them as
// up->right->down->left->up.

inline int grid_cell_index(int x, int y, int n) { return x * n + y; }

inline std::pair<int, int> grid_cell_xy(int s, int n) { return {s / n, s % n}; }

inline std::pair<int, int> rot90_cell(int x, int y, int n) { return {y, n - 1 - x}; }

inline const int kGridDirX[4] = {0, -1, 0, 1};
inline const int kGridDirY[4] = {1, 0, -1, 0};

// Permutation of the 4 move directions induced by rot90^k.
inline std::vector<std::vector<int>> c4_direction_perms() {
  // rot90 maps direction (dx,dy) -> (dy,-dx): up->right, left->up, down->left,
  // right->down.
  std::vector<std::vector<int>> perm(4, std::vector<int>(4));
  for (int a = 0; a < 4; ++a) perm[0][a] = a;
  const int r1[4] = {3, 0, 1, 2};
  for (int a = 0; a < 4; ++a) perm[1][a] = r1[a];
  for (int k = 2; k < 4; ++k)
    for (int a = 0; a < 4; ++a) perm[k][a] = perm[1][perm[k - 1][a]];
  return perm;
}

// C4 acting on single agent cells of an N x N board (goal held fixed at the
// centre or handled jointly elsewhere) plus the induced action permutation.
inline PermutationAction c4_grid_action(int n) {
  PermutationAction act;
  act.group = FiniteGroup::cyclic(4);
  act.state.assign(4, std::vector<int>(static_cast<std::size_t>(n) * n));
  for (int s = 0; s < n * n; ++s) act.state[0][s] = s;
  for (int s = 0; s < n * n; ++s) {
    auto [x, y] = grid_cell_xy(s, n);
    auto [rx, ry] = rot90_cell(x, y, n);
    act.state[1][s] = grid_cell_index(rx, ry, n);
  }
  for (int k = 2; k < 4; ++k)
    for (int s = 0; s < n * n; ++s) act.state[k][s] = act.state[1][act.state[k - 1][s]];
  act.action = c4_direction_perms();
  return act;
}

// C4 acting jointly on (agent, goal) cell pairs; joint index = agent*N^2+goal.
inline PermutationAction c4_joint_grid_action(int n) {
  PermutationAction act;
  act.group = FiniteGroup::cyclic(4);
  const PermutationAction cell = c4_grid_action(n);
  const int nc = n * n;
  act.state.assign(4, std::vector<int>(static_cast<std::size_t>(nc) * nc));
  for (int k = 0; k < 4; ++k)
    for (int a = 0; a < nc; ++a)
      for (int g = 0; g < nc; ++g)
        act.state[k][static_cast<std::size_t>(a) * nc + g] =
            cell.state[k][a] * nc + cell.state[k][g];
  act.action = cell.action;
  return act;
}

// C4 acting linearly on observations made of `blocks` centred 2D coordinate
// pairs, with the direction permutation (or a caller-supplied output rep) on
// the output side.
inline LinearAction c4_obs_action(int blocks, int out_dim_per_perm = 4) {
  LinearAction act;
  act.group = FiniteGroup::cyclic(4);
  const int d = 2 * blocks;
  // rot90 on centred coords: (u,v) -> (v,-u).
  Eigen::Matrix2d r;
  r << 0, 1, -1, 0;
  for (int k = 0; k < 4; ++k) {
    Eigen::Matrix2d rk = Eigen::Matrix2d::Identity();
    for (int i = 0; i < k; ++i) rk = r * rk;
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d, d);
    for (int b = 0; b < blocks; ++b) m.block<2, 2>(2 * b, 2 * b) = rk;
    act.in_rep.push_back(m);
  }
  const auto perms = c4_direction_perms();
  for (int k = 0; k < 4; ++k) {
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(out_dim_per_perm, out_dim_per_perm);
    if (out_dim_per_perm == 4) {
      for (int a = 0; a < 4; ++a) p(perms[k][a], a) = 1.0;
    } else {
      p.setIdentity();  // invariant output
    }
    act.out_rep.push_back(p);
  }
  return act;
}

// C4 acting on 2D point-mass observations [agent(2), goal(2)] and rotating
// the 2D action vector.
inline LinearAction c4_pointmass_action() {
  LinearAction act = c4_obs_action(2);
  act.out_rep.clear();
  Eigen::Matrix2d r;
  r << 0, 1, -1, 0;
  for (int k = 0; k < 4; ++k) {
    Eigen::Matrix2d rk = Eigen::Matrix2d::Identity();
    for (int i = 0; i < k; ++i) rk = r * rk;
    act.out_rep.push_back(rk);
  }
  return act;
}

// Random permutation action used by the verification suites: a random
// permutation p with p^order = id realizes the cyclic group, applied to both
// state and action index sets.
inline PermutationAction random_cyclic_action(int group_order, int n_states, int n_actions,
                                              Rng& rng) {
  PermutationAction act;
  act.group = FiniteGroup::cyclic(group_order);

  auto make_generator = [&](int m) {
    // Partition indices into cycles of length `group_order` (plus fixed
    // points) so the generator has the right order.
    std::vector<int> idx(m);
    for (int i = 0; i < m; ++i) idx[i] = i;
    for (int i = m - 1; i > 0; --i) std::swap(idx[i], idx[rng.uniform_int(i + 1)]);
    std::vector<int> perm(m);
    for (int i = 0; i < m; ++i) perm[i] = i;
    int i = 0;
    while (i + group_order <= m) {
      for (int j = 0; j < group_order; ++j)
        perm[idx[i + j]] = idx[i + (j + 1) % group_order];
      i += group_order;
    }
    return perm;
  };

  auto powers = [&](const std::vector<int>& gen) {
    const int m = static_cast<int>(gen.size());
    std::vector<std::vector<int>> out(group_order, std::vector<int>(m));
    for (int x = 0; x < m; ++x) out[0][x] = x;
    for (int k = 1; k < group_order; ++k)
      for (int x = 0; x < m; ++x) out[k][x] = gen[out[k - 1][x]];
    return out;
  };

  act.state = powers(make_generator(n_states));
  act.action = powers(make_generator(n_actions));
  return act;
}

}  // namespace pimdp
