#pragma once

#include <cmath>
#include <numbers>

namespace riskmpc {

/// Planar waypoint position (meters).
struct State2 {
  double x = 0.0;
  double y = 0.0;
};

/// Planar pose with heading; psi is kept in (-pi, pi] by wrap_angle.
struct State3 {
  double x = 0.0;
  double y = 0.0;
  double psi = 0.0;

  State2 position() const { return {x, y}; }
};

/// Inertial-frame planar velocity (m/s).
struct Control2 {
  double vx = 0.0;
  double vy = 0.0;
};

/// Inertial-frame planar velocity plus yaw rate.
struct Control3 {
  double vx = 0.0;
  double vy = 0.0;
  double psi_dot = 0.0;
};

/// Full 2x2 planar position covariance in m^2, row-major.
///
/// Stored with four entries because raw network outputs are not symmetric;
/// psd_correct() produces the symmetric, non-negative-diagonal form.
struct Covariance2 {
  double sxx = 0.0;
  double sxy = 0.0;
  double syx = 0.0;
  double syy = 0.0;

  double trace() const { return sxx + syy; }
  bool operator==(const Covariance2&) const = default;
};

/// Planar disc obstacle.
struct Obstacle {
  double cx = 0.0;
  double cy = 0.0;
  double radius = 0.0;
};

struct RobotGeometry {
  double body_radius = 0.7;
  /// Scale from covariance standard deviation to extra collision radius.
  double confidence_scale = 2.0;
};

double wrap_angle(double angle);

double distance(State2 a, State2 b);

/// Zeroes the off-diagonals and replaces negative diagonal entries by their
/// magnitude.
Covariance2 psd_correct(const Covariance2& m);

/// Largest eigenvalue of the symmetric part of `sigma`.
double max_eigenvalue(const Covariance2& sigma);

/// body_radius + confidence_scale * sqrt(lambda_max(sigma)).
double major_axis_radius(const Covariance2& sigma, const RobotGeometry& geom);

/// Left-hand side of the slack-relaxed collision constraint:
///   -|p - c| + r_sigma + r_o - eps.  Non-positive means clear.
double collision_margin(double x, double y, const Obstacle& obs, double r_sigma, double eps);

}  // namespace riskmpc
