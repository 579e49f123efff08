#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "pimdp/rng.hpp"

namespace pimdp {

// 2D point-mass reach task in a C4-symmetric square arena. A fixed wall
// segment, not part of the observation, breaks the symmetry locally.
struct PointMassSpec {
  double half_width = 1.0;
  // Wall segments as (x1,y1,x2,y2); motion is clamped at the first crossing.
  std::vector<Eigen::Vector4d> walls = {Eigen::Vector4d(0.25, 0.05, 0.25, 0.55)};
  double goal_radius = 0.1;
  double dt = 0.05;
  double max_speed = 1.0;
  int episode_cap = 120;
  double goal_spawn_radius = 0.8;  // goals sampled uniformly in this box
};

struct PointMassState {
  Eigen::Vector2d agent{0.0, 0.0};
  Eigen::Vector2d goal{0.0, 0.0};
  int steps = 0;
};

struct PointMassStepResult {
  Eigen::Vector4d obs;
  double reward = 0.0;
  bool done = false;
  bool terminal = false;  // goal reached
};

class PointMass {
 public:
  explicit PointMass(PointMassSpec spec) : spec_(std::move(spec)) {}

  const PointMassSpec& spec() const { return spec_; }
  const PointMassState& state() const { return state_; }

  Eigen::Vector4d observation() const {
    Eigen::Vector4d o;
    o << state_.agent, state_.goal;
    return o;
  }

  Eigen::Vector4d reset(Rng& rng) {
    const double r = spec_.goal_spawn_radius;
    for (int attempt = 0;; ++attempt) {
      state_.agent = {rng.uniform(-r, r), rng.uniform(-r, r)};
      state_.goal = {rng.uniform(-r, r), rng.uniform(-r, r)};
      if ((state_.agent - state_.goal).norm() > 2.0 * spec_.goal_radius) break;
      if (attempt > 1000) break;
    }
    state_.steps = 0;
    return observation();
  }

  PointMassStepResult step(const Eigen::Vector2d& action) {
    Eigen::Vector2d a = action.cwiseMax(-1.0).cwiseMin(1.0);
    Eigen::Vector2d target = state_.agent + a * spec_.max_speed * spec_.dt;
    target = target.cwiseMax(-spec_.half_width).cwiseMin(spec_.half_width);
    state_.agent = clamp_against_walls(state_.agent, target);
    ++state_.steps;
    PointMassStepResult res;
    const double dist = (state_.agent - state_.goal).norm();
    res.reward = -dist;
    res.terminal = dist <= spec_.goal_radius;
    res.done = res.terminal || state_.steps >= spec_.episode_cap;
    res.obs = observation();
    return res;
  }

 private:
  // Stop at the earliest wall crossing along the motion segment.
  Eigen::Vector2d clamp_against_walls(const Eigen::Vector2d& from,
                                      const Eigen::Vector2d& to) const {
    double t_min = 1.0;
    const Eigen::Vector2d d = to - from;
    for (const auto& w : spec_.walls) {
      const Eigen::Vector2d p(w(0), w(1));
      const Eigen::Vector2d q(w(2), w(3));
      const Eigen::Vector2d e = q - p;
      const double denom = d.x() * e.y() - d.y() * e.x();
      if (std::abs(denom) < 1e-15) continue;  // parallel
      const Eigen::Vector2d fp = p - from;
      const double t = (fp.x() * e.y() - fp.y() * e.x()) / denom;
      const double u = (fp.x() * d.y() - fp.y() * d.x()) / denom;
      if (t >= 0.0 && t <= 1.0 && u >= 0.0 && u <= 1.0) t_min = std::min(t_min, t);
    }
    if (t_min >= 1.0) return to;
    const double back = std::max(0.0, t_min - 1e-6 / std::max(d.norm(), 1e-12));
    return from + back * d;
  }

  PointMassSpec spec_;
  PointMassState state_{};
};

}  // namespace pimdp
