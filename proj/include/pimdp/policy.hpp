#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace pimdp {

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kAtanhClamp = 1e-6;

// Diagonal Gaussian over a pre-squash variable.
struct DiagGaussian {
  Eigen::VectorXd mean;
  Eigen::VectorXd log_std;  // clamped to [kLogStdMin, kLogStdMax]

  Eigen::VectorXd std() const { return log_std.array().exp().matrix(); }

  void clamp() {
    log_std = log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
  }
};

// Precision-weighted fusion of two diagonal Gaussians:
//   Sigma_H^-1 = (1-lambda) Sigma_E^-1 + lambda Sigma_N^-1
//   mu_H = Sigma_H ((1-lambda) Sigma_E^-1 mu_E + lambda Sigma_N^-1 mu_N)
inline DiagGaussian poe_gaussian(const DiagGaussian& p_e, const DiagGaussian& p_n,
                                 double lambda) {
  if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("poe_gaussian: lambda in [0,1]");
  if (lambda == 0.0) return p_e;
  if (lambda == 1.0) return p_n;
  const Eigen::ArrayXd prec_e = (-2.0 * p_e.log_std.array()).exp();
  const Eigen::ArrayXd prec_n = (-2.0 * p_n.log_std.array()).exp();
  const Eigen::ArrayXd prec_h = (1.0 - lambda) * prec_e + lambda * prec_n;
  DiagGaussian out;
  out.mean = (((1.0 - lambda) * prec_e * p_e.mean.array() + lambda * prec_n * p_n.mean.array()) /
              prec_h)
                 .matrix();
  out.log_std = (-0.5 * prec_h.log()).matrix();
  return out;
}

// log(1 - tanh(u)^2) via the overflow-safe identity
// 2*(log 2 - u - softplus(-2u)).
inline double log_one_minus_tanh_sq(double u) {
  const double z = -2.0 * u;
  const double softplus = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
  return 2.0 * (std::log(2.0) - u - softplus);
}

// Log-density of a = tanh(u), u ~ g, by change of variables.
inline double tanh_log_prob(const DiagGaussian& g, const Eigen::VectorXd& action) {
  double lp = 0.0;
  for (int i = 0; i < action.size(); ++i) {
    double a = action(i);
    a = std::max(-1.0 + kAtanhClamp, std::min(1.0 - kAtanhClamp, a));
    const double u = std::atanh(a);
    const double sigma = std::exp(g.log_std(i));
    const double z = (u - g.mean(i)) / sigma;
    lp += -0.5 * z * z - g.log_std(i) - 0.918938533204672742;  // 0.5*log(2*pi)
    lp -= log_one_minus_tanh_sq(u);
  }
  return lp;
}

struct ReparamSample {
  Eigen::VectorXd action;   // tanh-squashed, in (-1,1)^D
  Eigen::VectorXd pre_squash;
  double log_prob = 0.0;
  // Pathwise derivatives of (action, log_prob) w.r.t. (mean, log_std):
  //   d action_i / d mean_i = (1 - a_i^2)
  //   d action_i / d log_std_i = (1 - a_i^2) * sigma_i * eps_i
  Eigen::VectorXd d_action_d_mean;
  Eigen::VectorXd d_action_d_log_std;
  Eigen::VectorXd d_logp_d_mean;
  Eigen::VectorXd d_logp_d_log_std;
};

// a = tanh(mu + sigma * eps) with the exact log-density at the sample and the
// derivative bookkeeping needed by a reparameterized actor step.
inline ReparamSample sample_reparam(const DiagGaussian& g, const Eigen::VectorXd& noise) {
  const int d = static_cast<int>(g.mean.size());
  ReparamSample s;
  s.pre_squash.resize(d);
  s.action.resize(d);
  s.d_action_d_mean.resize(d);
  s.d_action_d_log_std.resize(d);
  s.d_logp_d_mean.resize(d);
  s.d_logp_d_log_std.resize(d);
  s.log_prob = 0.0;
  for (int i = 0; i < d; ++i) {
    const double sigma = std::exp(g.log_std(i));
    const double u = g.mean(i) + sigma * noise(i);
    const double a = std::tanh(u);
    const double sech2 = 1.0 - a * a;
    s.pre_squash(i) = u;
    s.action(i) = a;
    const double z = noise(i);  // (u - mu)/sigma
    s.log_prob += -0.5 * z * z - g.log_std(i) - 0.918938533204672742;
    s.log_prob -= log_one_minus_tanh_sq(u);
    s.d_action_d_mean(i) = sech2;
    s.d_action_d_log_std(i) = sech2 * sigma * z;
    // d log p / d u of the Jacobian term: -d/du log(1-tanh^2 u) = 2*tanh(u).
    const double dlp_du = 2.0 * a;  // base-density term in z is constant along the path
    s.d_logp_d_mean(i) = dlp_du;
    s.d_logp_d_log_std(i) = -1.0 + dlp_du * sigma * z;
  }
  return s;
}

// Asymmetric quadratic L_tau(u) = |tau - 1{u<0}| u^2.
inline double expectile_loss(double u, double tau) {
  if (tau <= 0.0 || tau >= 1.0) throw std::invalid_argument("expectile_loss: tau in (0,1)");
  const double w = (u < 0.0) ? (1.0 - tau) : tau;
  return w * u * u;
}

inline double expectile_loss_grad(double u, double tau) {
  const double w = (u < 0.0) ? (1.0 - tau) : tau;
  return 2.0 * w * u;
}

}  // namespace pimdp
