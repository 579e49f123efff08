#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "pimdp/group.hpp"
#include "pimdp/rng.hpp"

namespace pimdp {

// Exact tabular MDP. reward(s,a); transition[a] is the nS x nS row-stochastic
// kernel P(s'|s,a). Immutable value type; all operators below are pure.
struct TabularMDP {
  int n_states = 0;
  int n_actions = 0;
  Eigen::MatrixXd reward;                    // nS x nA
  std::vector<Eigen::MatrixXd> transition;   // per action, nS x nS
  double gamma = 0.99;
  double r_max = 1.0;

  double v_max() const { return r_max / (1.0 - gamma); }

  bool valid(double tol = 1e-12) const {
    if (n_states <= 0 || n_actions <= 0) return false;
    if (reward.rows() != n_states || reward.cols() != n_actions) return false;
    if (static_cast<int>(transition.size()) != n_actions) return false;
    if (gamma <= 0.0 || gamma >= 1.0) return false;
    if (reward.cwiseAbs().maxCoeff() > r_max + tol) return false;
    for (const auto& p : transition) {
      if (p.rows() != n_states || p.cols() != n_states) return false;
      if (p.minCoeff() < -tol) return false;
      for (int s = 0; s < n_states; ++s)
        if (std::abs(p.row(s).sum() - 1.0) > tol) return false;
    }
    return true;
  }
};

struct GateTable {
  Eigen::MatrixXd lambda;  // nS x nA, entries in [0,1]

  static GateTable constant(int n_states, int n_actions, double value) {
    GateTable g;
    g.lambda = Eigen::MatrixXd::Constant(n_states, n_actions, value);
    return g;
  }
};

struct QTable {
  Eigen::MatrixXd q;  // nS x nA

  static QTable zeros(int n_states, int n_actions) {
    QTable t;
    t.q = Eigen::MatrixXd::Zero(n_states, n_actions);
    return t;
  }
};

// Group-averaged surrogate: R_E(s,a) = mean_g R(gs,ga),
// P_E(s'|s,a) = mean_g P(gs'|gs,ga). Output is exactly G-invariant.
inline TabularMDP build_group_invariant(const TabularMDP& mdp, const PermutationAction& act) {
  if (act.n_states() != mdp.n_states || act.n_actions() != mdp.n_actions)
    throw std::invalid_argument("build_group_invariant: incompatible dimensions");
  const int n = act.group.order;
  TabularMDP out = mdp;
  out.reward.setZero();
  for (auto& p : out.transition) p.setZero();
  for (int g = 0; g < n; ++g) {
    for (int s = 0; s < mdp.n_states; ++s) {
      const int gs = act.state[g][s];
      for (int a = 0; a < mdp.n_actions; ++a) {
        const int ga = act.action[g][a];
        out.reward(s, a) += mdp.reward(gs, ga);
        for (int s2 = 0; s2 < mdp.n_states; ++s2)
          out.transition[a](s, s2) += mdp.transition[ga](gs, act.state[g][s2]);
      }
    }
  }
  out.reward /= static_cast<double>(n);
  for (auto& p : out.transition) p /= static_cast<double>(n);
  return out;
}

// Pointwise discrepancies between a true MDP and its surrogate.
inline double epsilon_r(const TabularMDP& mdp_n, const TabularMDP& mdp_e, int s, int a) {
  return std::abs(mdp_n.reward(s, a) - mdp_e.reward(s, a));
}

inline double epsilon_p(const TabularMDP& mdp_n, const TabularMDP& mdp_e, int s, int a) {
  return 0.5 * (mdp_n.transition[a].row(s) - mdp_e.transition[a].row(s)).cwiseAbs().sum();
}

// Pointwise one-step error bound delta = eps_R + 2*gamma*V_max*eps_P.
inline double delta(const TabularMDP& mdp_n, const TabularMDP& mdp_e, int s, int a) {
  return epsilon_r(mdp_n, mdp_e, s, a) +
         2.0 * mdp_n.gamma * mdp_n.v_max() * epsilon_p(mdp_n, mdp_e, s, a);
}

inline Eigen::MatrixXd delta_table(const TabularMDP& mdp_n, const TabularMDP& mdp_e) {
  Eigen::MatrixXd d(mdp_n.n_states, mdp_n.n_actions);
  for (int s = 0; s < mdp_n.n_states; ++s)
    for (int a = 0; a < mdp_n.n_actions; ++a) d(s, a) = delta(mdp_n, mdp_e, s, a);
  return d;
}

// Gated convex combination of the two MDPs, per (s,a).
inline TabularMDP build_pi_mdp(const TabularMDP& mdp_n, const TabularMDP& mdp_e,
                               const GateTable& gate) {
  if (gate.lambda.minCoeff() < 0.0 || gate.lambda.maxCoeff() > 1.0)
    throw std::invalid_argument("build_pi_mdp: gate out of [0,1]");
  TabularMDP out = mdp_n;
  for (int s = 0; s < out.n_states; ++s)
    for (int a = 0; a < out.n_actions; ++a) {
      const double lam = gate.lambda(s, a);
      out.reward(s, a) = (1.0 - lam) * mdp_e.reward(s, a) + lam * mdp_n.reward(s, a);
      out.transition[a].row(s) =
          (1.0 - lam) * mdp_e.transition[a].row(s) + lam * mdp_n.transition[a].row(s);
    }
  out.r_max = std::max(mdp_n.r_max, mdp_e.r_max);
  return out;
}

// (T Q)(s,a) = R + gamma * sum_s' P(s'|s,a) max_a' Q(s',a').
inline QTable bellman_hard_backup(const TabularMDP& mdp, const QTable& q) {
  const Eigen::VectorXd v = q.q.rowwise().maxCoeff();
  QTable out;
  out.q.resize(mdp.n_states, mdp.n_actions);
  for (int a = 0; a < mdp.n_actions; ++a)
    out.q.col(a) = mdp.reward.col(a) + mdp.gamma * (mdp.transition[a] * v);
  return out;
}

// Soft backup with V(s) = alpha * log sum_a exp(Q(s,a)/alpha).
inline QTable bellman_soft_backup(const TabularMDP& mdp, const QTable& q, double alpha) {
  if (alpha <= 0.0) throw std::invalid_argument("bellman_soft_backup: alpha must be > 0");
  Eigen::VectorXd v(mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s) {
    const double m = q.q.row(s).maxCoeff();
    double acc = 0.0;
    for (int a = 0; a < mdp.n_actions; ++a) acc += std::exp((q.q(s, a) - m) / alpha);
    v(s) = m + alpha * std::log(acc);
  }
  QTable out;
  out.q.resize(mdp.n_states, mdp.n_actions);
  for (int a = 0; a < mdp.n_actions; ++a)
    out.q.col(a) = mdp.reward.col(a) + mdp.gamma * (mdp.transition[a] * v);
  return out;
}

struct ValueIterationResult {
  QTable q;
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
};

// Banach iteration to sup-norm residual <= tol; hard cap guards malformed
// inputs. Pass soft_alpha > 0 for the entropy-regularized operator.
inline ValueIterationResult value_iteration(const TabularMDP& mdp, double tol = 1e-10,
                                            double soft_alpha = 0.0,
                                            long max_iterations = 1000000) {
  if (tol <= 0.0) throw std::invalid_argument("value_iteration: tol must be > 0");
  ValueIterationResult res;
  res.q = QTable::zeros(mdp.n_states, mdp.n_actions);
  for (long it = 0; it < max_iterations; ++it) {
    QTable next = soft_alpha > 0.0 ? bellman_soft_backup(mdp, res.q, soft_alpha)
                                   : bellman_hard_backup(mdp, res.q);
    res.residual = (next.q - res.q.q).cwiseAbs().maxCoeff();
    res.q = std::move(next);
    ++res.iterations;
    if (res.residual <= tol) {
      res.converged = true;
      return res;
    }
  }
  return res;  // non-convergence signalled by converged == false
}

// max |T_H Q - [(1-lambda) T_E Q + lambda T_N Q]| over (s,a).
inline double verify_affinity(const TabularMDP& mdp_n, const TabularMDP& mdp_e,
                              const GateTable& gate, const QTable& q) {
  const TabularMDP mdp_h = build_pi_mdp(mdp_n, mdp_e, gate);
  const QTable th = bellman_hard_backup(mdp_h, q);
  const QTable te = bellman_hard_backup(mdp_e, q);
  const QTable tn = bellman_hard_backup(mdp_n, q);
  const Eigen::MatrixXd blend = (Eigen::MatrixXd::Ones(q.q.rows(), q.q.cols()) - gate.lambda)
                                    .cwiseProduct(te.q) +
                                gate.lambda.cwiseProduct(tn.q);
  return (th.q - blend).cwiseAbs().maxCoeff();
}

// Minimum slack of |T_N Q - T_E Q| <= eps_R + 2 gamma ||V_Q|| eps_P over all
// (s,a); a violation shows up as slack < 0.
inline double verify_one_step_bound(const TabularMDP& mdp_n, const TabularMDP& mdp_e,
                                    const QTable& q) {
  const QTable tn = bellman_hard_backup(mdp_n, q);
  const QTable te = bellman_hard_backup(mdp_e, q);
  const double v_norm = q.q.rowwise().maxCoeff().cwiseAbs().maxCoeff();
  double worst = std::numeric_limits<double>::infinity();
  for (int s = 0; s < mdp_n.n_states; ++s)
    for (int a = 0; a < mdp_n.n_actions; ++a) {
      const double lhs = std::abs(tn.q(s, a) - te.q(s, a));
      const double rhs = epsilon_r(mdp_n, mdp_e, s, a) +
                         2.0 * mdp_n.gamma * v_norm * epsilon_p(mdp_n, mdp_e, s, a);
      worst = std::min(worst, rhs - lhs);
    }
  return worst;
}

struct GapBound {
  double gap = 0.0;
  double bound = 0.0;
};

// ||Q*_N - Q*_E||_inf against sup delta / (1-gamma).
inline GapBound verify_value_gap(const TabularMDP& mdp_n, const TabularMDP& mdp_e,
                                 double tol = 1e-10) {
  GapBound out;
  const QTable qn = value_iteration(mdp_n, tol).q;
  const QTable qe = value_iteration(mdp_e, tol).q;
  out.gap = (qn.q - qe.q).cwiseAbs().maxCoeff();
  out.bound = delta_table(mdp_n, mdp_e).maxCoeff() / (1.0 - mdp_n.gamma);
  return out;
}

// ||Q*_H - Q*_N||_inf against ||(1-lambda) delta||_inf / (1-gamma).
inline GapBound verify_proximity(const TabularMDP& mdp_n, const TabularMDP& mdp_e,
                                 const GateTable& gate, double tol = 1e-10) {
  GapBound out;
  const TabularMDP mdp_h = build_pi_mdp(mdp_n, mdp_e, gate);
  const QTable qh = value_iteration(mdp_h, tol).q;
  const QTable qn = value_iteration(mdp_n, tol).q;
  out.gap = (qh.q - qn.q).cwiseAbs().maxCoeff();
  const Eigen::MatrixXd d = delta_table(mdp_n, mdp_e);
  const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(d.rows(), d.cols());
  out.bound = ((ones - gate.lambda).cwiseProduct(d)).maxCoeff() / (1.0 - mdp_n.gamma);
  return out;
}

// Empirical Lipschitz ratio of the operator over random Q pairs. Degenerate
// draws (zero denominator) are rejected and redrawn.
inline double contraction_estimate(const TabularMDP& mdp, int trials, Rng& rng,
                                   double q_scale = 1.0) {
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    QTable q1 = QTable::zeros(mdp.n_states, mdp.n_actions);
    QTable q2 = q1;
    double diff = 0.0;
    do {
      for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_actions; ++a) {
          q1.q(s, a) = rng.uniform(-q_scale, q_scale);
          q2.q(s, a) = rng.uniform(-q_scale, q_scale);
        }
      diff = (q1.q - q2.q).cwiseAbs().maxCoeff();
    } while (diff == 0.0);
    const QTable t1 = bellman_hard_backup(mdp, q1);
    const QTable t2 = bellman_hard_backup(mdp, q2);
    worst = std::max(worst, (t1.q - t2.q).cwiseAbs().maxCoeff() / diff);
  }
  return worst;
}

// Per-state relative equivariance error |V(s) - V(gs)| / |V(s)|. Cells with
// |V(s)| below the cutoff fall back to absolute error and are flagged.
struct EquivarianceError {
  double error = 0.0;
  bool absolute = false;
};

inline std::vector<EquivarianceError> equivariance_error_map(const Eigen::VectorXd& v_star,
                                                             const PermutationAction& act,
                                                             int g, double cutoff = 1e-8) {
  std::vector<EquivarianceError> out(static_cast<std::size_t>(v_star.size()));
  for (int s = 0; s < v_star.size(); ++s) {
    const double diff = std::abs(v_star(s) - v_star(act.state[g][s]));
    if (std::abs(v_star(s)) < cutoff) {
      out[s] = {diff, true};
    } else {
      out[s] = {diff / std::abs(v_star(s)), false};
    }
  }
  return out;
}

// --- Randomized instances for the verification suites ------------------------

// Dirichlet(1) transition rows, uniform[-1,1] rewards.
inline TabularMDP random_mdp(int n_states, int n_actions, double gamma, Rng& rng) {
  TabularMDP m;
  m.n_states = n_states;
  m.n_actions = n_actions;
  m.gamma = gamma;
  m.r_max = 1.0;
  m.reward.resize(n_states, n_actions);
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a) m.reward(s, a) = rng.uniform(-1.0, 1.0);
  m.transition.assign(n_actions, Eigen::MatrixXd(n_states, n_states));
  for (int a = 0; a < n_actions; ++a)
    for (int s = 0; s < n_states; ++s) {
      double sum = 0.0;
      for (int s2 = 0; s2 < n_states; ++s2) {
        // Dirichlet(1) row via normalized exponentials.
        double u = rng.uniform01();
        while (u <= 0.0) u = rng.uniform01();
        const double e = -std::log(u);
        m.transition[a](s, s2) = e;
        sum += e;
      }
      m.transition[a].row(s) /= sum;
    }
  return m;
}

// A group-invariant MDP with a controlled number of broken (s,a) pairs:
// average a random MDP over the group, then re-randomize a few rows/rewards.
struct PartiallyInvariantInstance {
  TabularMDP mdp_n;
  TabularMDP mdp_e;
  PermutationAction action;
};

inline PartiallyInvariantInstance random_partially_invariant(int n_states, int n_actions,
                                                             int group_order, double gamma,
                                                             int n_broken, Rng& rng) {
  PartiallyInvariantInstance inst;
  inst.action = random_cyclic_action(group_order, n_states, n_actions, rng);
  TabularMDP base = random_mdp(n_states, n_actions, gamma, rng);
  inst.mdp_n = build_group_invariant(base, inst.action);
  for (int k = 0; k < n_broken; ++k) {
    const int s = rng.uniform_int(n_states);
    const int a = rng.uniform_int(n_actions);
    inst.mdp_n.reward(s, a) = rng.uniform(-1.0, 1.0);
    double sum = 0.0;
    for (int s2 = 0; s2 < n_states; ++s2) {
      double u = rng.uniform01();
      while (u <= 0.0) u = rng.uniform01();
      inst.mdp_n.transition[a](s, s2) = -std::log(u);
      sum += inst.mdp_n.transition[a](s, s2);
    }
    inst.mdp_n.transition[a].row(s) /= sum;
  }
  inst.mdp_e = build_group_invariant(inst.mdp_n, inst.action);
  return inst;
}

// Oracle gate: route to the true MDP exactly where the pointwise bound is
// materially nonzero.
inline GateTable oracle_gate(const TabularMDP& mdp_n, const TabularMDP& mdp_e,
                             double threshold = 1e-12) {
  GateTable g = GateTable::constant(mdp_n.n_states, mdp_n.n_actions, 0.0);
  for (int s = 0; s < mdp_n.n_states; ++s)
    for (int a = 0; a < mdp_n.n_actions; ++a)
      if (delta(mdp_n, mdp_e, s, a) > threshold) g.lambda(s, a) = 1.0;
  return g;
}

}  // namespace pimdp
