#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "pimdp/net.hpp"
#include "pimdp/policy.hpp"
#include "pimdp/rng.hpp"

namespace pimdp {

// Single-pass running mean/variance.
struct Welford {
  long count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void update(double d) {
    ++count;
    const double d1 = d - mean;
    mean += d1 / static_cast<double>(count);
    m2 += d1 * (d - mean);
  }

  // Sample variance (n-1 denominator).
  double variance() const { return count > 1 ? m2 / static_cast<double>(count - 1) : 0.0; }
  double stddev() const { return std::sqrt(variance()); }
};

// tau_t = beta * tau_{t-1} + (1-beta) * (mu + kappa*sigma); the first update
// sets tau directly.
struct SmoothedThreshold {
  double kappa = 1.5;
  double beta = 0.2;
  double tau = 0.0;
  bool initialized = false;

  double update(double mean, double stddev) {
    const double raw = mean + kappa * stddev;
    tau = initialized ? beta * tau + (1.0 - beta) * raw : raw;
    initialized = true;
    return tau;
  }
};

// Empirical upper-alpha quantile: the sorted-order statistic at level
// (1-alpha) with linear interpolation; ties resolve toward the larger value
// by taking the right-continuous interpolation on the ascending sort.
inline double quantile_threshold(std::vector<double> values, double alpha) {
  if (values.empty()) throw std::invalid_argument("quantile_threshold: empty batch");
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("quantile_threshold: alpha in [0,1]");
  std::sort(values.begin(), values.end());
  const double pos = (1.0 - alpha) * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= values.size()) return values.back();
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

// y = 1{d > tau}, strict.
inline double pseudo_label(double d, double tau) { return d > tau ? 1.0 : 0.0; }

inline double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// Stable BCE on logits; returns the mean loss and writes dL/dz into dz.
inline double bce_with_logits(const Eigen::VectorXd& logits, const Eigen::VectorXd& labels,
                              Eigen::VectorXd* dz) {
  const int n = static_cast<int>(logits.size());
  double loss = 0.0;
  if (dz) dz->resize(n);
  for (int i = 0; i < n; ++i) {
    const double z = logits(i);
    const double y = labels(i);
    const double softplus = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    loss += softplus - y * z;
    if (dz) (*dz)(i) = (sigmoid(z) - y) / static_cast<double>(n);
  }
  return loss / static_cast<double>(n);
}

// Row-wise softmax of logits.
inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  for (int i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    Eigen::ArrayXd e = (logits.row(i).array() - m).exp();
    p.row(i) = (e / e.sum()).matrix();
  }
  return p;
}

// Dual one-step predictors: an equivariant head and an unconstrained head on
// the same input layout. Discrete mode predicts a categorical distribution
// over the 5 relative outcomes {stay,up,left,down,right}; continuous mode
// regresses the observation increment. An optional scalar reward head rides
// on the same trunk output.
struct PredictorPair {
  bool discrete = true;
  bool reward_head = false;
  int pred_dim = 5;  // categorical classes or increment dimension
  EquivariantFn pe;
  Mlp pn;
  Adam opt_e;
  Adam opt_n;
  double clip = 1.0;

  int out_dim() const { return pred_dim + (reward_head ? 1 : 0); }

  static PredictorPair make_discrete(const std::vector<int>& hidden, const LinearAction& obs_act,
                                     bool reward_head, double lr, Rng& rng) {
    PredictorPair p;
    p.discrete = true;
    p.reward_head = reward_head;
    p.pred_dim = 5;

    // Input: obs(4) + action one-hot(4). Output: 5 outcome logits
    // (+ invariant reward).
    LinearAction act;
    act.group = obs_act.group;
    const int n = act.group.order;
    for (int g = 0; g < n; ++g) {
      Eigen::MatrixXd in = Eigen::MatrixXd::Zero(8, 8);
      in.block(0, 0, 4, 4) = obs_act.in_rep[g];
      in.block(4, 4, 4, 4) = obs_act.out_rep[g];  // action permutation
      act.in_rep.push_back(in);
      const int od = p.out_dim();
      Eigen::MatrixXd out = Eigen::MatrixXd::Zero(od, od);
      out(0, 0) = 1.0;  // "stay" is fixed
      out.block(1, 1, 4, 4) = obs_act.out_rep[g];
      if (reward_head) out(5, 5) = 1.0;  // scalar reward is invariant
      act.out_rep.push_back(out);
    }

    std::vector<int> widths{8};
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(p.out_dim());
    p.pe = EquivariantFn::make(Mlp::make(widths, rng), act);
    p.pn = Mlp::make(widths, rng);
    p.opt_e = Adam::make(p.pe.base, lr);
    p.opt_n = Adam::make(p.pn, lr);
    return p;
  }

  static PredictorPair make_continuous(const std::vector<int>& hidden, const LinearAction& sa_act,
                                       int obs_dim, int act_dim, double lr, Rng& rng) {
    PredictorPair p;
    p.discrete = false;
    p.reward_head = false;
    p.pred_dim = obs_dim;
    std::vector<int> widths{obs_dim + act_dim};
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(obs_dim);
    p.pe = EquivariantFn::make(Mlp::make(widths, rng), sa_act);
    p.pn = Mlp::make(widths, rng);
    p.opt_e = Adam::make(p.pe.base, lr);
    p.opt_n = Adam::make(p.pn, lr);
    return p;
  }

  // One gradient step on each predictor. Discrete: cross-entropy on the
  // outcome class (+ reward MSE); continuous: MSE on the increment.
  // Returns (loss_e, loss_n).
  std::pair<double, double> train_step(const Eigen::MatrixXd& x, const Eigen::MatrixXd& target,
                                       const Eigen::VectorXd* rewards = nullptr) {
    const int b = static_cast<int>(x.rows());
    auto loss_and_grad = [&](const Eigen::MatrixXd& y, Eigen::MatrixXd& dy) {
      double loss = 0.0;
      dy.resize(y.rows(), y.cols());
      if (discrete) {
        const Eigen::MatrixXd p = softmax_rows(y.leftCols(pred_dim));
        for (int i = 0; i < b; ++i) {
          const int cls = static_cast<int>(target(i, 0));
          loss += -std::log(std::max(p(i, cls), 1e-300));
          for (int c = 0; c < pred_dim; ++c)
            dy(i, c) = (p(i, c) - (c == cls ? 1.0 : 0.0)) / b;
        }
        if (reward_head) {
          for (int i = 0; i < b; ++i) {
            const double err = y(i, pred_dim) - (*rewards)(i);
            loss += err * err;
            dy(i, pred_dim) = 2.0 * err / b;
          }
        }
      } else {
        const Eigen::MatrixXd err = y - target;
        loss = err.squaredNorm();
        dy = 2.0 * err / b;
      }
      return loss / b;
    };

    EquivariantFn::Cache ce;
    const Eigen::MatrixXd ye = pe.forward(x, &ce);
    Eigen::MatrixXd dye;
    const double le = loss_and_grad(ye, dye);
    opt_e.step(pe.base, pe.backward(ce, dye), clip);

    Mlp::Cache cn;
    const Eigen::MatrixXd yn = pn.forward(x, &cn);
    Eigen::MatrixXd dyn;
    const double ln = loss_and_grad(yn, dyn);
    opt_n.step(pn, pn.backward(cn, dyn), clip);
    return {le, ln};
  }

  // Disagreement per row: TV between categorical outputs (+ reward l1) in
  // discrete mode, squared increment difference in continuous mode.
  Eigen::VectorXd disagreement(const Eigen::MatrixXd& x) const {
    const Eigen::MatrixXd ye = pe.forward(x);
    const Eigen::MatrixXd yn = pn.forward(x);
    Eigen::VectorXd d(x.rows());
    if (discrete) {
      const Eigen::MatrixXd p_e = softmax_rows(ye.leftCols(pred_dim));
      const Eigen::MatrixXd p_n = softmax_rows(yn.leftCols(pred_dim));
      for (int i = 0; i < x.rows(); ++i) {
        d(i) = 0.5 * (p_n.row(i) - p_e.row(i)).cwiseAbs().sum();
        if (reward_head) d(i) += std::abs(yn(i, pred_dim) - ye(i, pred_dim));
      }
    } else {
      for (int i = 0; i < x.rows(); ++i) d(i) = (ye.row(i) - yn.row(i)).squaredNorm();
    }
    return d;
  }
};

// Critic gate lambda_w(s,a), its EMA target used for Bernoulli sampling in RL
// updates, and the state-only actor gate lambda_z(s). All output a single
// logit; probabilities are sigmoids.
struct GateNets {
  Mlp lam_w;
  Mlp lam_w_target;
  Mlp lam_z;
  Adam opt_w;
  Adam opt_z;
  double clip = 1.0;
  double tau_lambda = 0.005;

  static GateNets make(int sa_dim, int s_dim, const std::vector<int>& hidden, double lr,
                       Rng& rng) {
    GateNets g;
    std::vector<int> w_widths{sa_dim};
    w_widths.insert(w_widths.end(), hidden.begin(), hidden.end());
    w_widths.push_back(1);
    g.lam_w = Mlp::make(w_widths, rng);
    g.lam_w_target = g.lam_w;
    std::vector<int> z_widths{s_dim};
    z_widths.insert(z_widths.end(), hidden.begin(), hidden.end());
    z_widths.push_back(1);
    g.lam_z = Mlp::make(z_widths, rng);
    g.opt_w = Adam::make(g.lam_w, lr);
    g.opt_z = Adam::make(g.lam_z, lr);
    return g;
  }

  Eigen::VectorXd prob_w(const Eigen::MatrixXd& x_sa) const {
    const Eigen::MatrixXd z = lam_w.forward(x_sa);
    Eigen::VectorXd p(z.rows());
    for (int i = 0; i < z.rows(); ++i) p(i) = sigmoid(z(i, 0));
    return p;
  }

  Eigen::VectorXd prob_w_target(const Eigen::MatrixXd& x_sa) const {
    const Eigen::MatrixXd z = lam_w_target.forward(x_sa);
    Eigen::VectorXd p(z.rows());
    for (int i = 0; i < z.rows(); ++i) p(i) = sigmoid(z(i, 0));
    return p;
  }

  Eigen::VectorXd prob_z(const Eigen::MatrixXd& x_s) const {
    const Eigen::MatrixXd z = lam_z.forward(x_s);
    Eigen::VectorXd p(z.rows());
    for (int i = 0; i < z.rows(); ++i) p(i) = sigmoid(z(i, 0));
    return p;
  }

  // One Adam step on BCE against pseudo-labels; returns the loss.
  double train_bce(const Eigen::MatrixXd& x_sa, const Eigen::VectorXd& labels) {
    Mlp::Cache c;
    const Eigen::MatrixXd z = lam_w.forward(x_sa, &c);
    Eigen::VectorXd dz;
    const double loss = bce_with_logits(z.col(0), labels, &dz);
    if (!std::isfinite(loss)) throw std::runtime_error("train_bce: non-finite loss");
    opt_w.step(lam_w, lam_w.backward(c, dz), clip);
    return loss;
  }

  // One step of expectile regression of lambda_z(s) toward the upper tail of
  // lambda_w(s, a_i) over the M candidate actions per state. targets is
  // n_states x M, detached.
  double train_z_expectile(const Eigen::MatrixXd& x_s, const Eigen::MatrixXd& targets,
                           double tau_exp) {
    Mlp::Cache c;
    const Eigen::MatrixXd z = lam_z.forward(x_s, &c);
    const int n = static_cast<int>(x_s.rows());
    const int m = static_cast<int>(targets.cols());
    Eigen::MatrixXd dz(n, 1);
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
      const double v = sigmoid(z(i, 0));
      double dv = 0.0;
      for (int j = 0; j < m; ++j) {
        const double u = targets(i, j) - v;
        loss += expectile_loss(u, tau_exp);
        dv += -expectile_loss_grad(u, tau_exp);
      }
      dz(i, 0) = dv * v * (1.0 - v) / (n * m);
    }
    opt_z.step(lam_z, lam_z.backward(c, dz), clip);
    return loss / (n * m);
  }

  void soft_update_target() { soft_update(lam_w_target, lam_w, tau_lambda); }
};

// Bernoulli draw from the smoothed gate probability; the sample carries no
// gradient (callers treat it as a constant).
inline double sample_hard_gate(double p_bar, Rng& rng) { return rng.bernoulli(p_bar) ? 1.0 : 0.0; }

// Bernoulli draw from max_i lambda_w(s, a_i) over K sampled candidate actions.
inline double sampled_max_gate(const GateNets& gates, const Eigen::MatrixXd& x_sa_candidates,
                               Rng& rng) {
  const Eigen::VectorXd p = gates.prob_w(x_sa_candidates);
  return sample_hard_gate(p.maxCoeff(), rng);
}

}  // namespace pimdp
