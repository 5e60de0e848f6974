#include "riskmpc/geometry.hpp"

#include <algorithm>

namespace riskmpc {

double wrap_angle(double angle) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double wrapped = std::remainder(angle, two_pi);
  if (wrapped <= -std::numbers::pi) wrapped += two_pi;
  return wrapped;
}

double distance(State2 a, State2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

Covariance2 psd_correct(const Covariance2& m) {
  return {std::abs(m.sxx), 0.0, 0.0, std::abs(m.syy)};
}

double max_eigenvalue(const Covariance2& sigma) {
  const double a = sigma.sxx;
  const double d = sigma.syy;
  const double b = 0.5 * (sigma.sxy + sigma.syx);
  if (b == 0.0) return std::max(a, d);
  const double mean = 0.5 * (a + d);
  const double half_gap = std::hypot(0.5 * (a - d), b);
  return mean + half_gap;
}

double major_axis_radius(const Covariance2& sigma, const RobotGeometry& geom) {
  const double lambda = std::max(0.0, max_eigenvalue(sigma));
  return geom.body_radius + geom.confidence_scale * std::sqrt(lambda);
}

double collision_margin(double x, double y, const Obstacle& obs, double r_sigma, double eps) {
  return -std::hypot(x - obs.cx, y - obs.cy) + r_sigma + obs.radius - eps;
}

}  // namespace riskmpc
