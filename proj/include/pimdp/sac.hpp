#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <type_traits>
#include <vector>

#include "pimdp/gating.hpp"
#include "pimdp/metrics.hpp"
#include "pimdp/net.hpp"
#include "pimdp/pointmass.hpp"
#include "pimdp/policy.hpp"
#include "pimdp/rng.hpp"

namespace pimdp {

struct SacConfig {
  // learned: full pipeline with hard Bernoulli gates.
  // fixed: constant soft blend (PoE policy, mixture critics).
  // wired0 / wired1: blending coefficient hard-wired, machinery optional.
  enum class Mode { learned, fixed, wired0, wired1 };
  Mode gate_mode = Mode::learned;
  double fixed_lambda = 0.5;
  bool pipeline = true;

  std::vector<int> hidden{256, 256};
  double lr = 3e-4;
  int batch = 256;
  double gamma = 0.99;
  double tau = 0.005;
  std::size_t buffer = 100000;
  double clip = 0.5;
  int update_every = 1;
  long learning_starts = 1000;
  long total_steps = 50000;
  double target_entropy = -1.0;  // -0.5 per action dimension

  double gate_lr = 1e-4;
  int predictor_grad_steps = 20;
  double kappa = 1.5;
  double beta = 0.2;
  int threshold_interval = 200;
  bool quantile_mode = false;
  double quantile_alpha = 0.6;
  long warm_steps = 40000;
  double p_warm = 0.7685;
  double tau_lambda = 0.005;
  double tau_exp = 0.8;
  int m_candidates = 4;

  long eval_every = 1000;
  int eval_episodes = 20;
  long metrics_every = 1000;
};

// Scalar Adam for the temperature parameter.
struct ScalarAdam {
  double lr = 3e-4;
  double m = 0.0, v = 0.0;
  long t = 0;
  void step(double& x, double g) {
    ++t;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    x -= lr * mh / (std::sqrt(vh) + 1e-8);
  }
};

// One soft actor-critic expert: twin critics with targets, a tanh-Gaussian
// actor and an entropy temperature. `equivariant` selects the symmetric
// parameterization for all three networks.
struct SacHead {
  bool equivariant = false;
  EquivariantFn qe1, qe2, qe1_t, qe2_t;
  Mlp qn1, qn2, qn1_t, qn2_t;
  EquivariantFn actor_e;
  Mlp actor_n;
  Adam opt_q1, opt_q2, opt_actor;
  double log_alpha = 0.0;
  ScalarAdam opt_alpha;

  static SacHead make(bool equivariant, const std::vector<int>& hidden, double lr, Rng& rng) {
    SacHead h;
    h.equivariant = equivariant;
    std::vector<int> qw{6};
    qw.insert(qw.end(), hidden.begin(), hidden.end());
    qw.push_back(1);
    std::vector<int> aw{4};
    aw.insert(aw.end(), hidden.begin(), hidden.end());
    aw.push_back(4);  // mean(2) + log_std(2)
    if (equivariant) {
      // Input: [agent(2), goal(2), action(2)], all rotating blocks.
      LinearAction q_act = c4_obs_action(3, 1);
      // Actor output: rotating mean, invariant log_std.
      LinearAction a_act = c4_obs_action(2, 1);
      a_act.out_rep.clear();
      Eigen::Matrix2d r;
      r << 0, 1, -1, 0;
      for (int k = 0; k < 4; ++k) {
        Eigen::Matrix2d rk = Eigen::Matrix2d::Identity();
        for (int i = 0; i < k; ++i) rk = r * rk;
        Eigen::MatrixXd m = Eigen::MatrixXd::Identity(4, 4);
        m.block<2, 2>(0, 0) = rk;
        a_act.out_rep.push_back(m);
      }
      h.qe1 = EquivariantFn::make(Mlp::make(qw, rng), q_act);
      h.qe2 = EquivariantFn::make(Mlp::make(qw, rng), q_act);
      h.qe1_t = h.qe1;
      h.qe2_t = h.qe2;
      h.actor_e = EquivariantFn::make(Mlp::make(aw, rng), a_act);
      h.opt_q1 = Adam::make(h.qe1.base, lr);
      h.opt_q2 = Adam::make(h.qe2.base, lr);
      h.opt_actor = Adam::make(h.actor_e.base, lr);
    } else {
      h.qn1 = Mlp::make(qw, rng);
      h.qn2 = Mlp::make(qw, rng);
      h.qn1_t = h.qn1;
      h.qn2_t = h.qn2;
      h.actor_n = Mlp::make(aw, rng);
      h.opt_q1 = Adam::make(h.qn1, lr);
      h.opt_q2 = Adam::make(h.qn2, lr);
      h.opt_actor = Adam::make(h.actor_n, lr);
    }
    h.opt_alpha.lr = lr;
    return h;
  }

  double alpha() const { return std::exp(log_alpha); }

  Eigen::MatrixXd actor_forward(const Eigen::MatrixXd& x, EquivariantFn::Cache* ce,
                                Mlp::Cache* cn) const {
    return equivariant ? actor_e.forward(x, ce) : actor_n.forward(x, cn);
  }

  DiagGaussian policy(const Eigen::Vector4d& obs) const {
    const Eigen::MatrixXd x = obs.transpose();
    const Eigen::MatrixXd y = equivariant ? actor_e.forward(x) : actor_n.forward(x);
    DiagGaussian g;
    g.mean = y.row(0).head(2).transpose();
    g.log_std = y.row(0).tail(2).transpose();
    g.clamp();
    return g;
  }

  Eigen::MatrixXd q_pair(const Eigen::MatrixXd& x_sa, bool target) const {
    Eigen::MatrixXd out(x_sa.rows(), 2);
    if (equivariant) {
      out.col(0) = (target ? qe1_t : qe1).forward(x_sa).col(0);
      out.col(1) = (target ? qe2_t : qe2).forward(x_sa).col(0);
    } else {
      out.col(0) = (target ? qn1_t : qn1).forward(x_sa).col(0);
      out.col(1) = (target ? qn2_t : qn2).forward(x_sa).col(0);
    }
    return out;
  }

  void soft_update_targets(double tau) {
    if (equivariant) {
      soft_update(qe1_t.base, qe1.base, tau);
      soft_update(qe2_t.base, qe2.base, tau);
    } else {
      soft_update(qn1_t, qn1, tau);
      soft_update(qn2_t, qn2, tau);
    }
  }
};

// Gated soft actor-critic on the point mass. Critics combine as a gated
// mixture per (s,a) (gate first, twin-min second); the actor is a hard switch
// between the equivariant and unconstrained heads driven by the state gate,
// collapsing to a product-of-experts blend only in the soft fixed mode.
class PeSacAgent {
 public:
  PeSacAgent(SacConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    if (cfg_.gate_mode == SacConfig::Mode::learned && !cfg_.pipeline)
      throw std::invalid_argument("PeSacAgent: learned gate mode requires the pipeline");
    Rng init = named_stream(seed, "init");
    head_e_ = SacHead::make(true, cfg_.hidden, cfg_.lr, init);
    head_n_ = SacHead::make(false, cfg_.hidden, cfg_.lr, init);
    if (cfg_.pipeline) {
      Rng init_gate = named_stream(seed, "init-gate");
      LinearAction sa_act = c4_obs_action(3, 1);
      LinearAction pred_act;
      pred_act.group = sa_act.group;
      pred_act.in_rep = sa_act.in_rep;
      // Output: the observation increment, rotating like the observation.
      const LinearAction obs_act = c4_obs_action(2, 1);
      pred_act.out_rep = obs_act.in_rep;
      predictors_ =
          PredictorPair::make_continuous(cfg_.hidden, pred_act, 4, 2, cfg_.lr, init_gate);
      gates_ = GateNets::make(6, 4, cfg_.hidden, cfg_.gate_lr, init_gate);
      gates_.tau_lambda = cfg_.tau_lambda;
      gates_.clip = cfg_.clip;
      threshold_.kappa = cfg_.kappa;
      threshold_.beta = cfg_.beta;
    }
  }

  const SacConfig& config() const { return cfg_; }
  const GateNets& gates() const { return gates_; }
  const SacHead& head_e() const { return head_e_; }
  const SacHead& head_n() const { return head_n_; }
  double current_threshold() const { return threshold_.tau; }

  // State gate draw (actor head selection). Soft in fixed mode.
  double state_lambda(const Eigen::Vector4d& obs, long step, Rng& gate_rng) {
    switch (cfg_.gate_mode) {
      case SacConfig::Mode::wired0:
        return 0.0;
      case SacConfig::Mode::wired1:
        return 1.0;
      case SacConfig::Mode::fixed:
        return cfg_.fixed_lambda;
      case SacConfig::Mode::learned:
        break;
    }
    if (step < cfg_.warm_steps && gate_rng.bernoulli(cfg_.p_warm)) return 1.0;
    Eigen::MatrixXd x = obs.transpose();
    return sample_hard_gate(gates_.prob_z(x)(0), gate_rng);
  }

  // Critic gate draw at one (s,a). Soft in fixed mode.
  double critic_lambda(const Eigen::VectorXd& x_sa_row, Rng& gate_rng) {
    switch (cfg_.gate_mode) {
      case SacConfig::Mode::wired0:
        return 0.0;
      case SacConfig::Mode::wired1:
        return 1.0;
      case SacConfig::Mode::fixed:
        return cfg_.fixed_lambda;
      case SacConfig::Mode::learned:
        break;
    }
    const Eigen::MatrixXd x = x_sa_row.transpose();
    return sample_hard_gate(gates_.prob_w_target(x)(0), gate_rng);
  }

  DiagGaussian fused_policy(const Eigen::Vector4d& obs, double lambda) const {
    if (lambda == 0.0) return head_e_.policy(obs);
    if (lambda == 1.0) return head_n_.policy(obs);
    return poe_gaussian(head_e_.policy(obs), head_n_.policy(obs), lambda);
  }

  Eigen::Vector2d act(const Eigen::Vector4d& obs, double lambda, bool stochastic, Rng& noise) {
    const DiagGaussian g = fused_policy(obs, lambda);
    if (!stochastic) return g.mean.array().tanh();
    Eigen::VectorXd eps(2);
    eps << noise.normal(), noise.normal();
    return sample_reparam(g, eps).action;
  }

  // One update: gated twin critics, hard-switch actor, per-head temperature.
  // Returns the mean critic loss.
  double sac_update(const ReplayBuffer& buffer, const std::vector<std::size_t>& idx,
                    Rng& update_rng, Rng& gate_rng, long step) {
    const int b = static_cast<int>(idx.size());
    Eigen::MatrixXd x_sa(b, 6), xn(b, 4), x_obs(b, 4);
    Eigen::VectorXd rewards(b), lam_q(b);
    std::vector<bool> terminal(b);
    for (int i = 0; i < b; ++i) {
      const auto& t = buffer[idx[i]];
      x_sa.row(i).head(4) = t.obs.transpose();
      x_sa.row(i).tail(2) = t.action.transpose();
      x_obs.row(i) = t.obs.transpose();
      xn.row(i) = t.next_obs.transpose();
      rewards(i) = t.reward;
      terminal[i] = t.terminal;
    }

    // Online critic gate, one draw per sample, cached for the whole pass.
    for (int i = 0; i < b; ++i) lam_q(i) = critic_lambda(x_sa.row(i).transpose(), gate_rng);

    // Targets: next action from the gate-selected policy head.
    Eigen::MatrixXd xn_sa(b, 6);
    Eigen::VectorXd logp_next(b), alpha_next(b), lam_q_next(b);
    for (int i = 0; i < b; ++i) {
      const Eigen::Vector4d next_obs = xn.row(i).transpose();
      const double zeta = state_lambda(next_obs, step, gate_rng);
      const DiagGaussian g = fused_policy(next_obs, zeta);
      Eigen::VectorXd eps(2);
      eps << update_rng.normal(), update_rng.normal();
      const ReparamSample s = sample_reparam(g, eps);
      xn_sa.row(i).head(4) = next_obs.transpose();
      xn_sa.row(i).tail(2) = s.action.transpose();
      logp_next(i) = s.log_prob;
      alpha_next(i) = (1.0 - zeta) * head_e_.alpha() + zeta * head_n_.alpha();
      lam_q_next(i) = critic_lambda(xn_sa.row(i).transpose(), gate_rng);
    }
    const Eigen::MatrixXd qe_t = head_e_.q_pair(xn_sa, true);
    const Eigen::MatrixXd qn_t = head_n_.q_pair(xn_sa, true);
    Eigen::VectorXd y(b);
    for (int i = 0; i < b; ++i) {
      const double q1 = (1.0 - lam_q_next(i)) * qe_t(i, 0) + lam_q_next(i) * qn_t(i, 0);
      const double q2 = (1.0 - lam_q_next(i)) * qe_t(i, 1) + lam_q_next(i) * qn_t(i, 1);
      const double qmin = std::min(q1, q2);
      y(i) = rewards(i) +
             (terminal[i] ? 0.0 : cfg_.gamma * (qmin - alpha_next(i) * logp_next(i)));
    }

    // Critic regression through the gated mixture; a network whose mixture
    // weight is zero on the entire batch is left untouched.
    double loss = 0.0;
    EquivariantFn::Cache ce1, ce2;
    Mlp::Cache cn1, cn2;
    const Eigen::MatrixXd qe1 = head_e_.qe1.forward(x_sa, &ce1);
    const Eigen::MatrixXd qe2 = head_e_.qe2.forward(x_sa, &ce2);
    const Eigen::MatrixXd qn1 = head_n_.qn1.forward(x_sa, &cn1);
    const Eigen::MatrixXd qn2 = head_n_.qn2.forward(x_sa, &cn2);
    Eigen::MatrixXd de1(b, 1), de2(b, 1), dn1(b, 1), dn2(b, 1);
    bool any_e = false, any_n = false;
    for (int i = 0; i < b; ++i) {
      const double w_e = 1.0 - lam_q(i), w_n = lam_q(i);
      const double err1 = w_e * qe1(i, 0) + w_n * qn1(i, 0) - y(i);
      const double err2 = w_e * qe2(i, 0) + w_n * qn2(i, 0) - y(i);
      loss += 0.5 * (err1 * err1 + err2 * err2);
      de1(i, 0) = w_e * err1 / b;
      de2(i, 0) = w_e * err2 / b;
      dn1(i, 0) = w_n * err1 / b;
      dn2(i, 0) = w_n * err2 / b;
      if (w_e > 0.0) any_e = true;
      if (w_n > 0.0) any_n = true;
    }
    if (any_e) {
      head_e_.opt_q1.step(head_e_.qe1.base, head_e_.qe1.backward(ce1, de1), cfg_.clip);
      head_e_.opt_q2.step(head_e_.qe2.base, head_e_.qe2.backward(ce2, de2), cfg_.clip);
    }
    if (any_n) {
      head_n_.opt_q1.step(head_n_.qn1, head_n_.qn1.backward(cn1, dn1), cfg_.clip);
      head_n_.opt_q2.step(head_n_.qn2, head_n_.qn2.backward(cn2, dn2), cfg_.clip);
    }

    // Actor: per-sample head selection by the state gate; each head trains on
    // its own rows only (both heads on all rows in the soft fixed mode).
    Eigen::VectorXd zeta(b);
    Eigen::MatrixXd noise_a(b, 2);
    for (int i = 0; i < b; ++i) {
      zeta(i) = state_lambda(x_obs.row(i).transpose(), step, gate_rng);
      noise_a(i, 0) = update_rng.normal();
      noise_a(i, 1) = update_rng.normal();
    }
    const bool soft = cfg_.gate_mode == SacConfig::Mode::fixed;
    actor_step(head_e_, x_obs, noise_a, zeta, /*head_n=*/false, soft);
    actor_step(head_n_, x_obs, noise_a, zeta, /*head_n=*/true, soft);

    head_e_.soft_update_targets(cfg_.tau);
    head_n_.soft_update_targets(cfg_.tau);
    return loss / b;
  }

  struct PipelineStats {
    double disagreement_mean = std::nan("");
    double disagreement_p95 = std::nan("");
    double label_fraction = std::nan("");
  };

  PipelineStats pipeline_update(const ReplayBuffer& buffer, long step, Rng& pred_rng) {
    PipelineStats stats;
    if (!cfg_.pipeline) return stats;

    auto assemble = [&](const std::vector<std::size_t>& idx, Eigen::MatrixXd& x,
                        Eigen::MatrixXd& target) {
      const int b = static_cast<int>(idx.size());
      x.resize(b, 6);
      target.resize(b, 4);
      for (int i = 0; i < b; ++i) {
        const auto& t = buffer[idx[i]];
        x.row(i).head(4) = t.obs.transpose();
        x.row(i).tail(2) = t.action.transpose();
        target.row(i) = (t.next_obs - t.obs).transpose();
      }
    };

    Eigen::MatrixXd x, target;
    for (int k = 0; k < cfg_.predictor_grad_steps; ++k) {
      const auto idx = buffer.sample_indices(cfg_.batch, pred_rng);
      assemble(idx, x, target);
      predictors_.train_step(x, target);
    }

    const auto idx = buffer.sample_indices(cfg_.batch, pred_rng);
    assemble(idx, x, target);
    const Eigen::VectorXd d = predictors_.disagreement(x);
    for (int i = 0; i < d.size(); ++i) welford_.update(d(i));
    std::vector<double> dv(d.data(), d.data() + d.size());
    std::sort(dv.begin(), dv.end());
    stats.disagreement_mean = d.mean();
    stats.disagreement_p95 = dv[static_cast<std::size_t>(0.95 * (dv.size() - 1))];

    if (step - last_threshold_step_ >= cfg_.threshold_interval || !threshold_.initialized) {
      if (cfg_.quantile_mode)
        threshold_.update(quantile_threshold(dv, cfg_.quantile_alpha), 0.0);
      else
        threshold_.update(welford_.mean, welford_.stddev());
      last_threshold_step_ = step;
    }

    Eigen::VectorXd labels(d.size());
    for (int i = 0; i < d.size(); ++i) labels(i) = pseudo_label(d(i), threshold_.tau);
    stats.label_fraction = labels.mean();

    // Gate losses stay disabled during the warm-start window.
    if (step < cfg_.warm_steps) return stats;
    gates_.train_bce(x, labels);
    gates_.soft_update_target();

    // State gate: expectile regression toward lambda_w at M candidate
    // actions per state, half from each policy head.
    const int b = static_cast<int>(idx.size());
    const int m = cfg_.m_candidates;
    Eigen::MatrixXd xs(b, 4), xsa(b * m, 6), targets(b, m);
    for (int i = 0; i < b; ++i) {
      const Eigen::Vector4d obs = buffer[idx[i]].obs.head<4>();
      xs.row(i) = obs.transpose();
      for (int j = 0; j < m; ++j) {
        Eigen::VectorXd eps(2);
        eps << pred_rng.normal(), pred_rng.normal();
        const DiagGaussian g = (j % 2 == 0) ? head_e_.policy(obs) : head_n_.policy(obs);
        const Eigen::VectorXd a = sample_reparam(g, eps).action;
        xsa.row(i * m + j).head(4) = obs.transpose();
        xsa.row(i * m + j).tail(2) = a.transpose();
      }
    }
    const Eigen::VectorXd p = gates_.prob_w(xsa);
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < m; ++j) targets(i, j) = p(i * m + j);
    gates_.train_z_expectile(xs, targets, cfg_.tau_exp);
    return stats;
  }

  double mean_gate_probability(const ReplayBuffer& buffer, std::size_t max_samples = 512) const {
    if (!cfg_.pipeline || buffer.size() == 0) return std::nan("");
    const std::size_t n = std::min(buffer.size(), max_samples);
    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), 6);
    for (std::size_t i = 0; i < n; ++i) {
      x.row(static_cast<Eigen::Index>(i)).head(4) = buffer[i].obs.transpose();
      x.row(static_cast<Eigen::Index>(i)).tail(2) = buffer[i].action.transpose();
    }
    return gates_.prob_w(x).mean();
  }

 private:
  // Reparameterized step on alpha*logp - min_k Q_k for one head, restricted
  // to the rows the state gate routed to it.
  void actor_step(SacHead& h, const Eigen::MatrixXd& x_obs, const Eigen::MatrixXd& noise,
                  const Eigen::VectorXd& zeta, bool head_n, bool soft) {
    const int b = static_cast<int>(x_obs.rows());
    std::vector<int> rows;
    for (int i = 0; i < b; ++i) {
      const bool selected = soft || (head_n ? zeta(i) == 1.0 : zeta(i) == 0.0);
      if (selected) rows.push_back(i);
    }
    if (rows.empty()) return;
    const int n = static_cast<int>(rows.size());
    Eigen::MatrixXd xs(n, 4), eps(n, 2);
    for (int r = 0; r < n; ++r) {
      xs.row(r) = x_obs.row(rows[r]);
      eps.row(r) = noise.row(rows[r]);
    }

    EquivariantFn::Cache ce;
    Mlp::Cache cn;
    const Eigen::MatrixXd out = h.actor_forward(xs, &ce, &cn);
    const double alpha = h.alpha();

    Eigen::MatrixXd x_pi(n, 6);
    std::vector<ReparamSample> samples(n);
    double mean_logp = 0.0;
    for (int r = 0; r < n; ++r) {
      DiagGaussian g;
      g.mean = out.row(r).head(2).transpose();
      g.log_std = out.row(r).tail(2).transpose();
      DiagGaussian gc = g;
      gc.clamp();
      samples[r] = sample_reparam(gc, eps.row(r).transpose());
      x_pi.row(r).head(4) = xs.row(r);
      x_pi.row(r).tail(2) = samples[r].action.transpose();
      mean_logp += samples[r].log_prob;
    }
    mean_logp /= n;

    // dQmin/da through the per-row smaller critic of this head.
    Eigen::MatrixXd dq_dx(n, 6);
    if (h.equivariant) {
      EquivariantFn::Cache c1, c2;
      const Eigen::MatrixXd q1 = h.qe1.forward(x_pi, &c1);
      const Eigen::MatrixXd q2 = h.qe2.forward(x_pi, &c2);
      Eigen::MatrixXd m1 = Eigen::MatrixXd::Zero(n, 1), m2 = m1;
      for (int r = 0; r < n; ++r) (q1(r, 0) <= q2(r, 0) ? m1 : m2)(r, 0) = 1.0;
      dq_dx = equivariant_input_grad(h.qe1, c1, m1) + equivariant_input_grad(h.qe2, c2, m2);
    } else {
      Mlp::Cache c1, c2;
      const Eigen::MatrixXd q1 = h.qn1.forward(x_pi, &c1);
      const Eigen::MatrixXd q2 = h.qn2.forward(x_pi, &c2);
      Eigen::MatrixXd m1 = Eigen::MatrixXd::Zero(n, 1), m2 = m1;
      for (int r = 0; r < n; ++r) (q1(r, 0) <= q2(r, 0) ? m1 : m2)(r, 0) = 1.0;
      Eigen::MatrixXd g1, g2;
      h.qn1.backward(c1, m1, &g1);
      h.qn2.backward(c2, m2, &g2);
      dq_dx = g1 + g2;
    }

    Eigen::MatrixXd d_out = Eigen::MatrixXd::Zero(n, 4);
    for (int r = 0; r < n; ++r) {
      for (int k = 0; k < 2; ++k) {
        const double dq_da = dq_dx(r, 4 + k);
        const double dmean =
            (alpha * samples[r].d_logp_d_mean(k) - dq_da * samples[r].d_action_d_mean(k)) / n;
        const double dlstd = (alpha * samples[r].d_logp_d_log_std(k) -
                              dq_da * samples[r].d_action_d_log_std(k)) /
                             n;
        d_out(r, k) = dmean;
        const double raw = out(r, 2 + k);
        d_out(r, 2 + k) = (raw > kLogStdMin && raw < kLogStdMax) ? dlstd : 0.0;
      }
    }
    if (h.equivariant)
      h.opt_actor.step(h.actor_e.base, h.actor_e.backward(ce, d_out), cfg_.clip);
    else
      h.opt_actor.step(h.actor_n, h.actor_n.backward(cn, d_out), cfg_.clip);

    const double g_alpha = -(mean_logp + cfg_.target_entropy) * h.alpha();
    h.opt_alpha.step(h.log_alpha, g_alpha);
    h.log_alpha = std::min(std::max(h.log_alpha, -10.0), 5.0);
  }

  // Gradient of an equivariant function's output w.r.t. its input.
  static Eigen::MatrixXd equivariant_input_grad(const EquivariantFn& f,
                                                const EquivariantFn::Cache& cache,
                                                const Eigen::MatrixXd& dy) {
    const int n = f.action.group.order;
    Eigen::MatrixXd total = Eigen::MatrixXd::Zero(dy.rows(), f.base.in_dim());
    for (int g = 0; g < n; ++g) {
      Eigen::MatrixXd dxg;
      f.base.backward(cache.per_element[g], dy * f.out_rep_inv[g], &dxg);
      total += dxg * f.action.in_rep[g];
    }
    return total / static_cast<double>(n);
  }

  SacConfig cfg_;
  SacHead head_e_, head_n_;
  PredictorPair predictors_;
  GateNets gates_;
  Welford welford_;
  SmoothedThreshold threshold_;
  long last_threshold_step_ = -1000000;
};

struct SacRunResult {
  std::vector<MetricsRow> metrics;
  double final_eval_mean = 0.0;
  double final_eval_stderr = 0.0;
  double final_success_rate = 0.0;
  double final_gate_rate = std::nan("");
};

struct SacEval {
  double mean_return = 0.0;
  double stderr_return = 0.0;
  double success_rate = 0.0;
};

// Deterministic-policy evaluation: mean return and goal-reach rate.
inline SacEval evaluate_sac(PeSacAgent& agent, const PointMassSpec& spec, int episodes,
                            Rng& env_rng, Rng& gate_rng) {
  PointMass env(spec);
  std::vector<double> returns;
  int successes = 0;
  Rng unused(0);
  for (int e = 0; e < episodes; ++e) {
    Eigen::Vector4d obs = env.reset(env_rng);
    double ret = 0.0;
    while (true) {
      const double lam =
          agent.state_lambda(obs, std::numeric_limits<long>::max(), gate_rng);
      const Eigen::Vector2d a = agent.act(obs, lam, false, unused);
      const PointMassStepResult r = env.step(a);
      ret += r.reward;
      obs = r.obs;
      if (r.done) {
        if (r.terminal) ++successes;
        break;
      }
    }
    returns.push_back(ret);
  }
  SacEval ev;
  for (double r : returns) ev.mean_return += r;
  ev.mean_return /= returns.size();
  double var = 0.0;
  for (double r : returns) var += (r - ev.mean_return) * (r - ev.mean_return);
  ev.stderr_return = returns.size() > 1
                         ? std::sqrt(var / (returns.size() - 1)) / std::sqrt(double(returns.size()))
                         : 0.0;
  ev.success_rate = static_cast<double>(successes) / episodes;
  return ev;
}

inline SacRunResult run_sac(const PointMassSpec& spec, const SacConfig& cfg, std::uint64_t seed,
                            PeSacAgent* agent_out = nullptr) {
  PeSacAgent agent(cfg, seed);
  PointMass env(spec);
  ReplayBuffer buffer(cfg.buffer);

  Rng env_rng = named_stream(seed, "env");
  Rng action_rng = named_stream(seed, "action-noise");
  Rng replay_rng = named_stream(seed, "replay-sampling");
  Rng gate_rng = named_stream(seed, "gate-bernoulli");
  Rng update_rng = named_stream(seed, "update-noise");
  Rng pred_rng = named_stream(seed, "pred-sample");
  Rng eval_env_rng = named_stream(seed, "eval-env");
  Rng eval_gate_rng = named_stream(seed, "eval-gate");

  SacRunResult out;
  Eigen::Vector4d obs = env.reset(env_rng);
  double episode_return = 0.0;
  double last_episode_return = std::nan("");
  double last_loss = std::nan("");
  PeSacAgent::PipelineStats last_stats;
  double last_state_gate = std::nan("");

  for (long step = 0; step < cfg.total_steps; ++step) {
    Eigen::Vector2d a;
    if (step < cfg.learning_starts) {
      a << action_rng.uniform(-1.0, 1.0), action_rng.uniform(-1.0, 1.0);
    } else {
      const double lam = agent.state_lambda(obs, step, gate_rng);
      last_state_gate = lam;
      a = agent.act(obs, lam, true, action_rng);
    }

    const PointMassStepResult r = env.step(a);
    ReplayBuffer::Transition t;
    t.obs = obs;
    t.action = a;
    t.reward = r.reward;
    t.next_obs = r.obs;
    t.terminal = r.terminal;
    buffer.push(std::move(t));
    episode_return += r.reward;
    obs = r.obs;
    if (r.done) {
      last_episode_return = episode_return;
      episode_return = 0.0;
      obs = env.reset(env_rng);
    }

    if (step >= cfg.learning_starts && buffer.size() >= static_cast<std::size_t>(cfg.batch) &&
        (step % cfg.update_every) == 0) {
      const auto idx = buffer.sample_indices(cfg.batch, replay_rng);
      last_loss = agent.sac_update(buffer, idx, update_rng, gate_rng, step);
      last_stats = agent.pipeline_update(buffer, step, pred_rng);
    }

    const long s1 = step + 1;
    const bool eval_now = (s1 % cfg.eval_every) == 0 || s1 == cfg.total_steps;
    if ((s1 % cfg.metrics_every) == 0 || eval_now) {
      MetricsRow row;
      row.step = s1;
      row.train_return = last_episode_return;
      row.td_loss = last_loss;
      row.gate_rate = agent.mean_gate_probability(buffer);
      row.state_gate_rate = last_state_gate;
      row.disagreement_mean = last_stats.disagreement_mean;
      row.disagreement_p95 = last_stats.disagreement_p95;
      row.threshold = agent.config().pipeline ? agent.current_threshold() : std::nan("");
      row.label_fraction = last_stats.label_fraction;
      row.epsilon_or_alpha = agent.head_e().alpha();
      if (eval_now) {
        const SacEval ev =
            evaluate_sac(agent, spec, cfg.eval_episodes, eval_env_rng, eval_gate_rng);
        row.eval_return_mean = ev.mean_return;
        row.eval_return_stderr = ev.stderr_return;
        out.final_eval_mean = ev.mean_return;
        out.final_eval_stderr = ev.stderr_return;
        out.final_success_rate = ev.success_rate;
      }
      out.metrics.push_back(row);
    }
  }

  out.final_gate_rate = agent.mean_gate_probability(buffer);
  if (agent_out) *agent_out = agent;
  return out;
}

}  // namespace pimdp
