#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "riskmpc/geometry.hpp"
#include "riskmpc/nlp.hpp"
#include "riskmpc/spline.hpp"

namespace riskmpc {

/// Waypoint planner on the 2-state point mass x+ = x + dt u.
struct PlannerConfig {
  int horizon = 12;
  double dt = 0.1;
  Eigen::Matrix2d q = Eigen::Matrix2d::Identity();
  /// Weights on (vx, vy, eps).
  Eigen::Matrix3d r = Eigen::Vector3d(0.05, 0.05, 1e8).asDiagonal();
  Eigen::Vector2d state_limit{50.0, 50.0};
  Eigen::Vector2d control_limit{1.5, 1.5};
  Eigen::Vector2d accel_limit{3.0, 3.0};
};

/// Reference tracker on the 3-state model (x, y, psi) driven by inertial
/// velocity and yaw rate.
struct TrackerConfig {
  int horizon = 10;
  double dt = 0.005;
  Eigen::Matrix3d q = Eigen::Vector3d(10.0, 10.0, 1.0).asDiagonal();
  Eigen::Matrix3d r = Eigen::Vector3d(1e-3, 1e-3, 1e-3).asDiagonal();
  double vx_limit = 2.2;
  double vy_limit = 0.75;
  double yaw_rate_limit = 3.0;
  Eigen::Vector3d accel_limit{20.0, 20.0, 40.0};
};

void validate(const PlannerConfig& cfg);
void validate(const TrackerConfig& cfg);

/// One planning cycle toward `goal`.  r_sigma_horizon[k] is the collision
/// radius for X_k, k = 0..N.  A solver result that did not converge is still
/// returned; its status tells the caller.
NlpSolution plan_step(State2 current, State2 goal, const std::vector<Obstacle>& obstacles,
                      const std::vector<double>& r_sigma_horizon, const PlannerConfig& cfg,
                      const std::optional<NlpSolution>& warm = std::nullopt, const SqpOptions& options = {});

struct TrackResult {
  Control3 command;
  NlpSolution solution;
};

/// One tracking cycle.  refs[0] is the reference at the current instant; the
/// sequence is padded by holding its last sample when shorter than N+1.
TrackResult track_step(State3 current, const std::vector<RefSample>& refs, const TrackerConfig& cfg,
                       const std::optional<NlpSolution>& warm = std::nullopt);

/// Drops the first stage of a solution and repeats the last one.
NlpSolution shift_warm_start(const NlpSolution& prev);

/// Reference for the next dt_plan seconds: a Hermite segment from waypoint
/// X_0 to X_2 of the plan, sampled at the tracker rate, with headings.
std::vector<RefSample> reference_from_plan(const NlpSolution& plan, double dt_plan, double dt_track,
                                           double current_heading);

}  // namespace riskmpc
