#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pimdp/group.hpp"
#include "pimdp/rng.hpp"
#include "pimdp/tabular.hpp"

namespace pimdp {

struct SlipModel {
  double p_intended = 0.65;  // remaining mass split uniformly over the other 3
};

struct GridSpec {
  int size = 15;
  std::set<int> obstacles;      // cell indices x*size+y
  std::set<int> penalty_cells;  // passable, traversal reward added on entry
  double goal_reward = 1.0;
  double step_reward = -0.01;
  double penalty_reward = -0.5;
  std::optional<SlipModel> slip;
  int episode_cap = 200;

  bool blocked(int x, int y) const {
    if (x < 0 || x >= size || y < 0 || y >= size) return true;
    return obstacles.count(grid_cell_index(x, y, size)) > 0;
  }
  bool free_cell(int c) const { return obstacles.count(c) == 0; }
  double centre() const { return (size - 1) / 2.0; }
};

struct GridState {
  int agent = 0;  // cell index
  int goal = 0;
  int steps = 0;
};

struct GridStepResult {
  Eigen::Vector4d obs;
  double reward = 0.0;
  bool done = false;      // goal reached or episode cap hit
  bool terminal = false;  // goal reached (bootstrap should stop here)
};

// All free cells mutually reachable by 4-neighbour moves?
inline bool grid_connected(const GridSpec& spec) {
  const int n = spec.size;
  int start = -1;
  int free_count = 0;
  for (int c = 0; c < n * n; ++c)
    if (spec.free_cell(c)) {
      ++free_count;
      if (start < 0) start = c;
    }
  if (free_count == 0) return false;
  std::vector<bool> seen(static_cast<std::size_t>(n) * n, false);
  std::deque<int> q{start};
  seen[start] = true;
  int reached = 1;
  while (!q.empty()) {
    const int c = q.front();
    q.pop_front();
    auto [x, y] = grid_cell_xy(c, n);
    for (int d = 0; d < 4; ++d) {
      const int nx = x + kGridDirX[d], ny = y + kGridDirY[d];
      if (spec.blocked(nx, ny)) continue;
      const int nc = grid_cell_index(nx, ny, n);
      if (!seen[nc]) {
        seen[nc] = true;
        ++reached;
        q.push_back(nc);
      }
    }
  }
  return reached == free_count;
}

// BFS shortest-path lengths from `from` over free cells; -1 if unreachable.
inline std::vector<int> grid_bfs_distances(const GridSpec& spec, int from) {
  const int n = spec.size;
  std::vector<int> dist(static_cast<std::size_t>(n) * n, -1);
  if (!spec.free_cell(from)) return dist;
  dist[from] = 0;
  std::deque<int> q{from};
  while (!q.empty()) {
    const int c = q.front();
    q.pop_front();
    auto [x, y] = grid_cell_xy(c, n);
    for (int d = 0; d < 4; ++d) {
      const int nx = x + kGridDirX[d], ny = y + kGridDirY[d];
      if (spec.blocked(nx, ny)) continue;
      const int nc = grid_cell_index(nx, ny, n);
      if (dist[nc] < 0) {
        dist[nc] = dist[c] + 1;
        q.push_back(nc);
      }
    }
  }
  return dist;
}

// Obstacles sampled uniformly without replacement; resampled until the free
// graph is connected. In the penalty variant a random half of the obstacles
// become passable penalty cells instead.
inline GridSpec random_layout(int size, int n_obstacles, std::uint64_t seed,
                              bool penalty_variant = false, std::optional<SlipModel> slip = {},
                              int max_attempts = 10000) {
  Rng rng = named_stream(seed, "layout");
  const int n_cells = size * size;
  if (n_obstacles >= n_cells - 1)
    throw std::invalid_argument("random_layout: infeasible obstacle density");
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    GridSpec spec;
    spec.size = size;
    spec.slip = slip;
    std::vector<int> cells(n_cells);
    for (int i = 0; i < n_cells; ++i) cells[i] = i;
    for (int i = n_cells - 1; i > 0; --i) std::swap(cells[i], cells[rng.uniform_int(i + 1)]);
    for (int i = 0; i < n_obstacles; ++i) spec.obstacles.insert(cells[i]);
    if (!grid_connected(spec)) continue;
    if (penalty_variant) {
      std::vector<int> obs(spec.obstacles.begin(), spec.obstacles.end());
      for (int i = static_cast<int>(obs.size()) - 1; i > 0; --i)
        std::swap(obs[i], obs[rng.uniform_int(i + 1)]);
      const int half = static_cast<int>(obs.size()) / 2;
      for (int i = 0; i < half; ++i) {
        spec.obstacles.erase(obs[i]);
        spec.penalty_cells.insert(obs[i]);
      }
    }
    return spec;
  }
  throw std::runtime_error("random_layout: could not find a connected layout");
}

// Text serialization: "size N" then "obstacle x y" / "penalty x y" lines.
inline std::string layout_to_text(const GridSpec& spec) {
  std::ostringstream os;
  os << "size " << spec.size << "\n";
  for (int c : spec.obstacles) {
    auto [x, y] = grid_cell_xy(c, spec.size);
    os << "obstacle " << x << " " << y << "\n";
  }
  for (int c : spec.penalty_cells) {
    auto [x, y] = grid_cell_xy(c, spec.size);
    os << "penalty " << x << " " << y << "\n";
  }
  return os.str();
}

inline GridSpec layout_from_text(const std::string& text) {
  GridSpec spec;
  std::istringstream is(text);
  std::string kind;
  bool have_size = false;
  while (is >> kind) {
    if (kind == "size") {
      is >> spec.size;
      have_size = true;
    } else if (kind == "obstacle" || kind == "penalty") {
      int x, y;
      if (!(is >> x >> y)) throw std::runtime_error("layout: malformed line");
      if (!have_size) throw std::runtime_error("layout: size must come first");
      const int c = grid_cell_index(x, y, spec.size);
      if (x < 0 || x >= spec.size || y < 0 || y >= spec.size)
        throw std::runtime_error("layout: cell outside board");
      (kind == "obstacle" ? spec.obstacles : spec.penalty_cells).insert(c);
    } else {
      throw std::runtime_error("layout: unknown keyword '" + kind + "'");
    }
  }
  if (!have_size) throw std::runtime_error("layout: missing size line");
  return spec;
}

// The C4 Grid-World. Single-owner mutable state machine; all stochasticity
// flows through the injected generator.
class GridWorld {
 public:
  explicit GridWorld(GridSpec spec) : spec_(std::move(spec)) {
    if (!grid_connected(spec_)) throw std::invalid_argument("GridWorld: free graph disconnected");
  }

  const GridSpec& spec() const { return spec_; }
  const GridState& state() const { return state_; }

  // Centred units so the C4 action is a linear rotation about the origin.
  Eigen::Vector4d observation() const {
    auto [ax, ay] = grid_cell_xy(state_.agent, spec_.size);
    auto [gx, gy] = grid_cell_xy(state_.goal, spec_.size);
    const double c = spec_.centre();
    return {ax - c, ay - c, gx - c, gy - c};
  }

  Eigen::Vector4d reset(Rng& rng) {
    std::vector<int> free;
    for (int c = 0; c < spec_.size * spec_.size; ++c)
      if (spec_.free_cell(c)) free.push_back(c);
    if (free.size() < 2) throw std::runtime_error("GridWorld::reset: no feasible placement");
    state_.agent = free[rng.uniform_int(static_cast<int>(free.size()))];
    do {
      state_.goal = free[rng.uniform_int(static_cast<int>(free.size()))];
    } while (state_.goal == state_.agent);
    state_.steps = 0;
    return observation();
  }

  GridStepResult step(int action, Rng& rng) {
    if (action < 0 || action >= 4) throw std::out_of_range("GridWorld::step: invalid action");
    int executed = action;
    if (spec_.slip) {
      if (!rng.bernoulli(spec_.slip->p_intended)) {
        int k = rng.uniform_int(3);
        executed = (action + 1 + k) % 4;
      }
    }
    auto [x, y] = grid_cell_xy(state_.agent, spec_.size);
    const int nx = x + kGridDirX[executed], ny = y + kGridDirY[executed];
    double reward = spec_.step_reward;
    if (!spec_.blocked(nx, ny)) {
      state_.agent = grid_cell_index(nx, ny, spec_.size);
      if (spec_.penalty_cells.count(state_.agent)) reward += spec_.penalty_reward;
    }
    ++state_.steps;
    GridStepResult res;
    res.terminal = (state_.agent == state_.goal);
    if (res.terminal) reward = spec_.goal_reward;
    res.reward = reward;
    res.done = res.terminal || state_.steps >= spec_.episode_cap;
    res.obs = observation();
    return res;
  }

 private:
  GridSpec spec_;
  GridState state_{};
};

// --- Exact tabular extraction -------------------------------------------------

// One-step law for agent cell s and executed direction d (no slip): the
// resulting cell and the reward against the given goal.
namespace detail {
inline int grid_move(const GridSpec& spec, int cell, int dir) {
  auto [x, y] = grid_cell_xy(cell, spec.size);
  const int nx = x + kGridDirX[dir], ny = y + kGridDirY[dir];
  if (spec.blocked(nx, ny)) return cell;
  return grid_cell_index(nx, ny, spec.size);
}

inline double grid_move_reward(const GridSpec& spec, int from, int to, int goal) {
  if (to == goal) return spec.goal_reward;
  double r = spec.step_reward;
  if (to != from && spec.penalty_cells.count(to)) r += spec.penalty_reward;
  return r;
}
}  // namespace detail

// Fixed-goal tabular MDP over all size^2 agent cells (obstacle cells are
// included as hypothetical states: entry is blocked, exit behaves normally).
// The goal cell is absorbing with zero reward.
inline TabularMDP grid_to_tabular(const GridSpec& spec, int goal) {
  const int n = spec.size * spec.size;
  TabularMDP m;
  m.n_states = n;
  m.n_actions = 4;
  m.gamma = 0.99;
  m.r_max = std::max({std::abs(spec.goal_reward),
                      std::abs(spec.step_reward) + std::abs(spec.penalty_reward), 1.0});
  m.reward = Eigen::MatrixXd::Zero(n, 4);
  m.transition.assign(4, Eigen::MatrixXd::Zero(n, n));
  const double p_int = spec.slip ? spec.slip->p_intended : 1.0;
  const double p_alt = spec.slip ? (1.0 - p_int) / 3.0 : 0.0;
  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < 4; ++a) {
      if (s == goal) {
        m.transition[a](s, s) = 1.0;
        continue;
      }
      for (int d = 0; d < 4; ++d) {
        const double p = (d == a) ? p_int : p_alt;
        if (p == 0.0) continue;
        const int s2 = detail::grid_move(spec, s, d);
        m.transition[a](s, s2) += p;
        m.reward(s, a) += p * detail::grid_move_reward(spec, s, s2, goal);
      }
    }
  }
  return m;
}

// Joint-mode tabular MDP over (agent, goal) pairs; joint index agent*N^2+goal.
// Feasible only for small boards (dense kernels are (N^2)^2 per action).
inline TabularMDP grid_to_tabular_joint(const GridSpec& spec) {
  const int nc = spec.size * spec.size;
  if (nc > 64)
    throw std::invalid_argument("grid_to_tabular_joint: board too large for dense kernels");
  const int n = nc * nc;
  TabularMDP m;
  m.n_states = n;
  m.n_actions = 4;
  m.gamma = 0.99;
  m.r_max = std::max({std::abs(spec.goal_reward),
                      std::abs(spec.step_reward) + std::abs(spec.penalty_reward), 1.0});
  m.reward = Eigen::MatrixXd::Zero(n, 4);
  m.transition.assign(4, Eigen::MatrixXd::Zero(n, n));
  const double p_int = spec.slip ? spec.slip->p_intended : 1.0;
  const double p_alt = spec.slip ? (1.0 - p_int) / 3.0 : 0.0;
  for (int agent = 0; agent < nc; ++agent)
    for (int goal = 0; goal < nc; ++goal) {
      const int s = agent * nc + goal;
      for (int a = 0; a < 4; ++a) {
        if (agent == goal) {
          m.transition[a](s, s) = 1.0;
          continue;
        }
        for (int d = 0; d < 4; ++d) {
          const double p = (d == a) ? p_int : p_alt;
          if (p == 0.0) continue;
          const int a2 = detail::grid_move(spec, agent, d);
          m.transition[a](s, a2 * nc + goal) += p;
          m.reward(s, a) += p * detail::grid_move_reward(spec, agent, a2, goal);
        }
      }
    }
  return m;
}

// Pointwise discrepancies of the joint-mode MDP against its C4 average,
// computed row-by-row without materializing dense kernels. Valid for any
// board size. Index layout: eps(agent*N^2+goal, action).
struct JointDiscrepancies {
  Eigen::MatrixXd eps_r;  // (N^2*N^2) x 4
  Eigen::MatrixXd eps_p;
  Eigen::MatrixXd delta;  // eps_r + 2*gamma*v_max*eps_p
};

inline JointDiscrepancies grid_joint_discrepancies(const GridSpec& spec, double gamma = 0.99) {
  const int nc = spec.size * spec.size;
  const PermutationAction cell_act = c4_grid_action(spec.size);
  JointDiscrepancies out;
  out.eps_r.resize(static_cast<Eigen::Index>(nc) * nc, 4);
  out.eps_p.resize(static_cast<Eigen::Index>(nc) * nc, 4);
  out.delta.resize(static_cast<Eigen::Index>(nc) * nc, 4);
  const double p_int = spec.slip ? spec.slip->p_intended : 1.0;
  const double p_alt = spec.slip ? (1.0 - p_int) / 3.0 : 0.0;
  const double r_max = std::max({std::abs(spec.goal_reward),
                                 std::abs(spec.step_reward) + std::abs(spec.penalty_reward), 1.0});
  const double v_max = r_max / (1.0 - gamma);

  // Sparse one-step row over next agent cells plus the expected reward.
  auto local_row = [&](int agent, int goal, int a) {
    std::vector<std::pair<int, double>> row;  // (next agent cell, prob)
    double reward = 0.0;
    if (agent == goal) {
      row.emplace_back(agent, 1.0);
      return std::make_pair(row, 0.0);
    }
    for (int d = 0; d < 4; ++d) {
      const double p = (d == a) ? p_int : p_alt;
      if (p == 0.0) continue;
      const int a2 = detail::grid_move(spec, agent, d);
      bool merged = false;
      for (auto& [c, pp] : row)
        if (c == a2) {
          pp += p;
          merged = true;
          break;
        }
      if (!merged) row.emplace_back(a2, p);
      reward += p * detail::grid_move_reward(spec, agent, a2, goal);
    }
    return std::make_pair(row, reward);
  };

  std::vector<double> acc(static_cast<std::size_t>(nc));
  for (int agent = 0; agent < nc; ++agent)
    for (int goal = 0; goal < nc; ++goal)
      for (int a = 0; a < 4; ++a) {
        auto [row_n, r_n] = local_row(agent, goal, a);
        // Group-averaged row, mapped back into this frame: P_E(s'|s,a) =
        // mean_g P_N(g s' | g s, g a).
        std::fill(acc.begin(), acc.end(), 0.0);
        double r_e = 0.0;
        std::vector<int> touched;
        for (int g = 0; g < 4; ++g) {
          const int ga = cell_act.state[g][agent];
          const int gg = cell_act.state[g][goal];
          const int gact = cell_act.action[g][a];
          auto [row_g, r_g] = local_row(ga, gg, gact);
          r_e += r_g;
          const int ginv = cell_act.group.inv(g);
          for (auto [c, p] : row_g) {
            const int back = cell_act.state[ginv][c];
            if (acc[back] == 0.0) touched.push_back(back);
            acc[back] += p;
          }
        }
        r_e *= 0.25;
        double tv = 0.0;
        // |P_N - P_E| over the union support.
        for (auto [c, p] : row_n) {
          bool listed = false;
          for (int t : touched)
            if (t == c) {
              listed = true;
              break;
            }
          if (!listed) touched.push_back(c);
        }
        for (int c : touched) {
          double pn = 0.0;
          for (auto [cc, p] : row_n)
            if (cc == c) pn = p;
          tv += std::abs(pn - acc[c] * 0.25);
          acc[c] = 0.0;
        }
        tv *= 0.5;
        const Eigen::Index s = static_cast<Eigen::Index>(agent) * nc + goal;
        out.eps_r(s, a) = std::abs(r_n - r_e);
        out.eps_p(s, a) = tv;
        out.delta(s, a) = out.eps_r(s, a) + 2.0 * gamma * v_max * tv;
      }
  return out;
}

}  // namespace pimdp
