#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "pimdp/gating.hpp"
#include "pimdp/grid.hpp"
#include "pimdp/metrics.hpp"
#include "pimdp/net.hpp"
#include "pimdp/rng.hpp"

namespace pimdp {

// How the blending coefficient is produced during training and acting.
//   learned : full pipeline (predictors, threshold, BCE gate, hard samples)
//   fixed   : constant soft blend with fixed_lambda
//   oracle  : lambda = oracle_lambda(obs, action), no draws
//   wired0  : lambda identically 0 (equivariant head only)
//   wired1  : lambda identically 1 (unconstrained head only)
enum class GateMode { learned, fixed, oracle, wired0, wired1 };

// Action-time gate in learned mode: the state gate network, or the max of the
// critic gate over all actions.
enum class ActorGate { learned_state, sampled_max };

struct DqnConfig {
  GateMode gate_mode = GateMode::learned;
  ActorGate actor_gate = ActorGate::learned_state;
  double fixed_lambda = 0.5;
  std::function<double(const Eigen::Vector4d&, int)> oracle_lambda;

  // When false the gate/predictor machinery is not constructed or trained at
  // all; only meaningful with wired modes (the plain baselines).
  bool pipeline = true;

  std::vector<int> hidden{256, 256};
  double lr = 3e-4;
  int batch = 256;
  double gamma = 0.99;
  double tau = 0.005;
  std::size_t buffer = 100000;
  double clip = 1.0;
  int update_every = 1;
  long learning_starts = 1000;
  long total_steps = 100000;

  double eps_start = 1.0;
  double eps_end = 0.05;
  long eps_decay_steps = 50000;

  // Gating pipeline.
  double gate_lr = 1e-4;
  int predictor_grad_steps = 20;
  bool reward_head = false;
  double kappa = 1.5;
  double beta = 0.2;
  int threshold_interval = 200;
  bool quantile_mode = false;
  double quantile_alpha = 0.6;
  long warm_steps = 20000;
  double p_warm = 0.5;
  double tau_lambda = 0.005;
  double tau_exp = 0.8;

  long eval_every = 1000;
  int eval_episodes = 20;
  long metrics_every = 1000;
};

inline Eigen::VectorXd obs_action_row(const Eigen::Vector4d& obs, int action) {
  Eigen::VectorXd x(8);
  x.head<4>() = obs;
  x.tail(4).setZero();
  x(4 + action) = 1.0;
  return x;
}

// Gated Q-learner on the grid world: an equivariant Q head and an
// unconstrained Q head combined per (s,a) by a hard or wired blending
// coefficient. Baselines are wired configurations of the same class.
class PeDqnAgent {
 public:
  PeDqnAgent(DqnConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    if (cfg_.gate_mode == GateMode::learned && !cfg_.pipeline)
      throw std::invalid_argument("PeDqnAgent: learned gate mode requires the pipeline");
    Rng init = named_stream(seed, "init");
    std::vector<int> widths{4};
    widths.insert(widths.end(), cfg_.hidden.begin(), cfg_.hidden.end());
    widths.push_back(4);
    const LinearAction act = c4_obs_action(2);
    qe_ = EquivariantFn::make(Mlp::make(widths, init), act);
    qn_ = Mlp::make(widths, init);
    qe_target_ = qe_;
    qn_target_ = qn_;
    opt_e_ = Adam::make(qe_.base, cfg_.lr);
    opt_n_ = Adam::make(qn_, cfg_.lr);

    if (cfg_.pipeline) {
      Rng init_gate = named_stream(seed, "init-gate");
      predictors_ =
          PredictorPair::make_discrete(cfg_.hidden, act, cfg_.reward_head, cfg_.lr, init_gate);
      gates_ = GateNets::make(8, 4, cfg_.hidden, cfg_.gate_lr, init_gate);
      gates_.tau_lambda = cfg_.tau_lambda;
      gates_.clip = cfg_.clip;
      threshold_.kappa = cfg_.kappa;
      threshold_.beta = cfg_.beta;
    }
  }

  const DqnConfig& config() const { return cfg_; }
  const EquivariantFn& qe() const { return qe_; }
  const Mlp& qn() const { return qn_; }
  const GateNets& gates() const { return gates_; }
  const PredictorPair& predictors() const { return predictors_; }
  double current_threshold() const { return threshold_.tau; }

  // Blended action values for one observation given a blending coefficient.
  Eigen::Vector4d blended_q(const Eigen::Vector4d& obs, double lambda) const {
    Eigen::MatrixXd x = obs.transpose();
    Eigen::Vector4d v = Eigen::Vector4d::Zero();
    if (lambda < 1.0) v += (1.0 - lambda) * qe_.forward(x).row(0).transpose();
    if (lambda > 0.0) v += lambda * qn_.forward(x).row(0).transpose();
    return v;
  }

  // Action-time blending coefficient; consumes gate draws only in learned
  // mode.
  double actor_lambda(const Eigen::Vector4d& obs, long step, Rng& gate_rng) {
    switch (cfg_.gate_mode) {
      case GateMode::wired0:
        return 0.0;
      case GateMode::wired1:
        return 1.0;
      case GateMode::fixed:
        return cfg_.fixed_lambda;
      case GateMode::oracle: {
        // A state-level oracle: gate on if any action breaks symmetry here.
        double lam = 0.0;
        for (int a = 0; a < 4; ++a) lam = std::max(lam, cfg_.oracle_lambda(obs, a));
        return lam;
      }
      case GateMode::learned:
        break;
    }
    if (step < cfg_.warm_steps && gate_rng.bernoulli(cfg_.p_warm)) return 1.0;
    if (cfg_.actor_gate == ActorGate::learned_state) {
      Eigen::MatrixXd x = obs.transpose();
      return sample_hard_gate(gates_.prob_z(x)(0), gate_rng);
    }
    Eigen::MatrixXd x(4, 8);
    for (int a = 0; a < 4; ++a) x.row(a) = obs_action_row(obs, a).transpose();
    return sampled_max_gate(gates_, x, gate_rng);
  }

  int greedy_action(const Eigen::Vector4d& obs, double lambda) const {
    int best = 0;
    const Eigen::Vector4d q = blended_q(obs, lambda);
    for (int a = 1; a < 4; ++a)
      if (q(a) > q(best)) best = a;
    return best;
  }

  // Blending coefficient used inside the TD target for one (s',a') pair.
  double target_lambda(const Eigen::Vector4d& next_obs, int action, Rng& gate_rng) {
    switch (cfg_.gate_mode) {
      case GateMode::wired0:
        return 0.0;
      case GateMode::wired1:
        return 1.0;
      case GateMode::fixed:
        return cfg_.fixed_lambda;
      case GateMode::oracle:
        return cfg_.oracle_lambda(next_obs, action);
      case GateMode::learned:
        break;
    }
    const Eigen::MatrixXd x = obs_action_row(next_obs, action).transpose();
    return sample_hard_gate(gates_.prob_w_target(x)(0), gate_rng);
  }

  // One TD step on the gated mixture Q_H = (1-lam)Q_E + lam*Q_N with the
  // blending coefficient sampled per (s,a) and treated as a constant, so each
  // head receives exactly its mixture weight of the gradient. Returns the mean
  // half squared TD error.
  double td_update(const ReplayBuffer& buffer, const std::vector<std::size_t>& idx,
                   Rng& gate_rng) {
    const int b = static_cast<int>(idx.size());
    Eigen::MatrixXd x(b, 4), xn(b, 4);
    Eigen::VectorXd y(b), lam(b);
    std::vector<int> acts(b);
    for (int i = 0; i < b; ++i) {
      const auto& t = buffer[idx[i]];
      x.row(i) = t.obs.transpose();
      xn.row(i) = t.next_obs.transpose();
      acts[i] = static_cast<int>(t.action(0));
    }
    // One blending draw per online (s,a), cached for this pass.
    for (int i = 0; i < b; ++i)
      lam(i) = target_lambda(x.row(i).transpose(), acts[i], gate_rng);
    const Eigen::MatrixXd qe_n = qe_target_.forward(xn);
    const Eigen::MatrixXd qn_n = qn_target_.forward(xn);
    for (int i = 0; i < b; ++i) {
      const auto& t = buffer[idx[i]];
      double target = t.reward;
      if (!t.terminal) {
        double best = -std::numeric_limits<double>::infinity();
        const Eigen::Vector4d next_obs = xn.row(i).transpose();
        for (int a = 0; a < 4; ++a) {
          const double l = target_lambda(next_obs, a, gate_rng);
          best = std::max(best, (1.0 - l) * qe_n(i, a) + l * qn_n(i, a));
        }
        target += cfg_.gamma * best;
      }
      y(i) = target;
    }

    EquivariantFn::Cache ce;
    Mlp::Cache cn;
    const Eigen::MatrixXd qe = qe_.forward(x, &ce);
    const Eigen::MatrixXd qn = qn_.forward(x, &cn);
    Eigen::MatrixXd dye = Eigen::MatrixXd::Zero(b, 4);
    Eigen::MatrixXd dyn = Eigen::MatrixXd::Zero(b, 4);
    double loss = 0.0;
    bool any_e = false, any_n = false;
    for (int i = 0; i < b; ++i) {
      const double q_h = (1.0 - lam(i)) * qe(i, acts[i]) + lam(i) * qn(i, acts[i]);
      const double err = q_h - y(i);
      loss += 0.5 * err * err;
      dye(i, acts[i]) = (1.0 - lam(i)) * err / b;
      dyn(i, acts[i]) = lam(i) * err / b;
      if (lam(i) < 1.0) any_e = true;
      if (lam(i) > 0.0) any_n = true;
    }
    // Heads with zero mixture weight on the whole batch are left untouched.
    if (any_e) opt_e_.step(qe_.base, qe_.backward(ce, dye), cfg_.clip);
    if (any_n) opt_n_.step(qn_, qn_.backward(cn, dyn), cfg_.clip);
    soft_update(qe_target_.base, qe_.base, cfg_.tau);
    soft_update(qn_target_, qn_, cfg_.tau);
    return loss / b;
  }

  struct PipelineStats {
    double disagreement_mean = std::nan("");
    double disagreement_p95 = std::nan("");
    double label_fraction = std::nan("");
    double gate_loss = std::nan("");
  };

  // Predictor, threshold, gate and state-gate updates on buffer batches.
  PipelineStats pipeline_update(const ReplayBuffer& buffer, long step, Rng& pred_rng) {
    PipelineStats stats;
    if (!cfg_.pipeline) return stats;

    auto assemble = [&](const std::vector<std::size_t>& idx, Eigen::MatrixXd& x,
                        Eigen::MatrixXd& target, Eigen::VectorXd& rewards) {
      const int b = static_cast<int>(idx.size());
      x.resize(b, 8);
      target.resize(b, 1);
      rewards.resize(b);
      for (int i = 0; i < b; ++i) {
        const auto& t = buffer[idx[i]];
        const int a = static_cast<int>(t.action(0));
        x.row(i) = obs_action_row(t.obs.head<4>(), a).transpose();
        // Relative outcome: 0 stay, 1..4 the move direction actually taken.
        const double dx = t.next_obs(0) - t.obs(0);
        const double dy = t.next_obs(1) - t.obs(1);
        int cls = 0;
        for (int d = 0; d < 4; ++d)
          if (std::abs(dx - kGridDirX[d]) < 0.5 && std::abs(dy - kGridDirY[d]) < 0.5) cls = 1 + d;
        if (std::abs(dx) < 0.5 && std::abs(dy) < 0.5) cls = 0;
        target(i, 0) = cls;
        rewards(i) = t.reward;
      }
    };

    Eigen::MatrixXd x, target;
    Eigen::VectorXd rewards;
    for (int k = 0; k < cfg_.predictor_grad_steps; ++k) {
      const auto idx = buffer.sample_indices(cfg_.batch, pred_rng);
      assemble(idx, x, target, rewards);
      predictors_.train_step(x, target, cfg_.reward_head ? &rewards : nullptr);
    }

    // Disagreement statistics and pseudo-labels on a fresh batch.
    const auto idx = buffer.sample_indices(cfg_.batch, pred_rng);
    assemble(idx, x, target, rewards);
    const Eigen::VectorXd d = predictors_.disagreement(x);
    for (int i = 0; i < d.size(); ++i) welford_.update(d(i));
    std::vector<double> dv(d.data(), d.data() + d.size());
    std::sort(dv.begin(), dv.end());
    stats.disagreement_mean = d.mean();
    stats.disagreement_p95 = dv[static_cast<std::size_t>(0.95 * (dv.size() - 1))];

    if (step - last_threshold_step_ >= cfg_.threshold_interval || !threshold_.initialized) {
      if (cfg_.quantile_mode) {
        threshold_.update(quantile_threshold(dv, cfg_.quantile_alpha), 0.0);
      } else {
        threshold_.update(welford_.mean, welford_.stddev());
      }
      last_threshold_step_ = step;
    }

    Eigen::VectorXd labels(d.size());
    for (int i = 0; i < d.size(); ++i) labels(i) = pseudo_label(d(i), threshold_.tau);
    stats.label_fraction = labels.mean();

    // Gate losses stay disabled during the warm-start window.
    if (step < cfg_.warm_steps) return stats;
    stats.gate_loss = gates_.train_bce(x, labels);
    gates_.soft_update_target();

    if (cfg_.actor_gate == ActorGate::learned_state) {
      const int b = static_cast<int>(idx.size());
      Eigen::MatrixXd xs(b, 4), xsa(b * 4, 8), targets(b, 4);
      for (int i = 0; i < b; ++i) {
        const Eigen::Vector4d obs = buffer[idx[i]].obs.head<4>();
        xs.row(i) = obs.transpose();
        for (int a = 0; a < 4; ++a) xsa.row(i * 4 + a) = obs_action_row(obs, a).transpose();
      }
      const Eigen::VectorXd p = gates_.prob_w(xsa);
      for (int i = 0; i < b; ++i)
        for (int a = 0; a < 4; ++a) targets(i, a) = p(i * 4 + a);
      gates_.train_z_expectile(xs, targets, cfg_.tau_exp);
    }
    return stats;
  }

  // Mean critic-gate probability over buffer states (diagnostic).
  double mean_gate_probability(const ReplayBuffer& buffer, std::size_t max_samples = 512) const {
    if (!cfg_.pipeline || buffer.size() == 0) return std::nan("");
    const std::size_t n = std::min(buffer.size(), max_samples);
    Eigen::MatrixXd x(static_cast<Eigen::Index>(n) * 4, 8);
    for (std::size_t i = 0; i < n; ++i) {
      const Eigen::Vector4d obs = buffer[i].obs.head<4>();
      for (int a = 0; a < 4; ++a)
        x.row(static_cast<Eigen::Index>(i) * 4 + a) = obs_action_row(obs, a).transpose();
    }
    return gates_.prob_w(x).mean();
  }

 private:
  DqnConfig cfg_;
  EquivariantFn qe_, qe_target_;
  Mlp qn_, qn_target_;
  Adam opt_e_, opt_n_;
  PredictorPair predictors_;
  GateNets gates_;
  Welford welford_;
  SmoothedThreshold threshold_;
  long last_threshold_step_ = -1000000;
};

struct DqnRunResult {
  std::vector<MetricsRow> metrics;
  double final_eval_mean = 0.0;
  double final_eval_stderr = 0.0;
  double final_gate_rate = std::nan("");
  std::vector<double> qe_params;  // flat equivariant-head parameters at the end
  std::vector<double> qn_params;
};

// Greedy evaluation episodes on a fresh copy of the environment.
inline std::pair<double, double> evaluate_dqn(PeDqnAgent& agent, const GridSpec& spec,
                                              int episodes, Rng& env_rng, Rng& gate_rng) {
  GridWorld env(spec);
  std::vector<double> returns;
  for (int e = 0; e < episodes; ++e) {
    Eigen::Vector4d obs = env.reset(env_rng);
    double ret = 0.0;
    while (true) {
      const double lam = agent.actor_lambda(obs, std::numeric_limits<long>::max(), gate_rng);
      const int a = agent.greedy_action(obs, lam);
      const GridStepResult r = env.step(a, env_rng);
      ret += r.reward;
      obs = r.obs;
      if (r.done) break;
    }
    returns.push_back(ret);
  }
  double mean = 0.0;
  for (double r : returns) mean += r;
  mean /= returns.size();
  double var = 0.0;
  for (double r : returns) var += (r - mean) * (r - mean);
  const double stderr_ =
      returns.size() > 1 ? std::sqrt(var / (returns.size() - 1)) / std::sqrt(double(returns.size()))
                         : 0.0;
  return {mean, stderr_};
}

inline DqnRunResult run_dqn(const GridSpec& spec, const DqnConfig& cfg, std::uint64_t seed,
                            PeDqnAgent* agent_out = nullptr) {
  PeDqnAgent agent(cfg, seed);
  GridWorld env(spec);
  ReplayBuffer buffer(cfg.buffer);

  Rng env_rng = named_stream(seed, "env");
  Rng action_rng = named_stream(seed, "action-noise");
  Rng replay_rng = named_stream(seed, "replay-sampling");
  Rng gate_rng = named_stream(seed, "gate-bernoulli");
  Rng pred_rng = named_stream(seed, "pred-sample");
  Rng eval_env_rng = named_stream(seed, "eval-env");
  Rng eval_gate_rng = named_stream(seed, "eval-gate");

  DqnRunResult out;
  Eigen::Vector4d obs = env.reset(env_rng);
  double episode_return = 0.0;
  double last_episode_return = std::nan("");
  double last_td_loss = std::nan("");
  PeDqnAgent::PipelineStats last_stats;
  double last_state_gate = std::nan("");

  for (long step = 0; step < cfg.total_steps; ++step) {
    const double frac = std::min(1.0, static_cast<double>(step) / cfg.eps_decay_steps);
    const double eps = cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start);

    int a;
    if (action_rng.bernoulli(eps)) {
      a = action_rng.uniform_int(4);
    } else {
      const double lam = agent.actor_lambda(obs, step, gate_rng);
      last_state_gate = lam;
      a = agent.greedy_action(obs, lam);
    }

    const GridStepResult r = env.step(a, env_rng);
    ReplayBuffer::Transition t;
    t.obs = obs;
    t.action = Eigen::VectorXd::Constant(1, a);
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
      last_td_loss = agent.td_update(buffer, idx, gate_rng);
      last_stats = agent.pipeline_update(buffer, step, pred_rng);
    }

    const long s1 = step + 1;
    const bool eval_now = (s1 % cfg.eval_every) == 0 || s1 == cfg.total_steps;
    if ((s1 % cfg.metrics_every) == 0 || eval_now) {
      MetricsRow row;
      row.step = s1;
      row.train_return = last_episode_return;
      row.td_loss = last_td_loss;
      row.gate_rate = agent.mean_gate_probability(buffer);
      row.state_gate_rate = last_state_gate;
      row.disagreement_mean = last_stats.disagreement_mean;
      row.disagreement_p95 = last_stats.disagreement_p95;
      row.threshold = agent.config().pipeline ? agent.current_threshold() : std::nan("");
      row.label_fraction = last_stats.label_fraction;
      row.epsilon_or_alpha = eps;
      if (eval_now) {
        auto [mean, se] = evaluate_dqn(agent, spec, cfg.eval_episodes, eval_env_rng,
                                       eval_gate_rng);
        row.eval_return_mean = mean;
        row.eval_return_stderr = se;
        out.final_eval_mean = mean;
        out.final_eval_stderr = se;
      }
      out.metrics.push_back(row);
    }
  }

  out.final_gate_rate = agent.mean_gate_probability(buffer);
  out.qe_params = agent.qe().base.flat_params();
  out.qn_params = agent.qn().flat_params();
  if (agent_out) *agent_out = agent;
  return out;
}

}  // namespace pimdp
