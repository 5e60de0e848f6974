#include "riskmpc/spline.hpp"

#include <cmath>
#include <stdexcept>

namespace riskmpc {

double Cubic1::value(double t) const { return a[0] + t * (a[1] + t * (a[2] + t * a[3])); }

double Cubic1::derivative(double t) const { return a[1] + t * (2.0 * a[2] + t * 3.0 * a[3]); }

Cubic1 fit_hermite_1d(double p0, double v0, double p1, double v1, double duration) {
  if (!(duration > 0.0)) throw std::invalid_argument("fit_hermite: duration must be positive");
  const double T = duration;
  const double dp = p1 - p0;
  Cubic1 c;
  c.duration = T;
  c.a[0] = p0;
  c.a[1] = v0;
  c.a[2] = (3.0 * dp - (2.0 * v0 + v1) * T) / (T * T);
  c.a[3] = (-2.0 * dp + (v0 + v1) * T) / (T * T * T);
  return c;
}

CubicSegment fit_hermite(State2 x0, Control2 u0, State2 x2, Control2 u2, double duration) {
  return {fit_hermite_1d(x0.x, u0.vx, x2.x, u2.vx, duration),
          fit_hermite_1d(x0.y, u0.vy, x2.y, u2.vy, duration)};
}

namespace {

std::size_t sample_count(double duration, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("sample_ref: dt_track must be positive");
  if (dt > duration * (1.0 + 1e-12)) {
    throw std::invalid_argument("sample_ref: dt_track exceeds segment duration");
  }
  return static_cast<std::size_t>(std::floor(duration / dt + 1e-9)) + 1;
}

}  // namespace

std::vector<RefSample> sample_ref(const CubicSegment& seg, double dt_track) {
  const std::size_t n = sample_count(seg.duration(), dt_track);
  std::vector<RefSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * dt_track;
    RefSample s;
    s.t = t;
    s.state = {seg.x.value(t), seg.y.value(t), 0.0};
    s.control = {seg.x.derivative(t), seg.y.derivative(t), 0.0};
    out.push_back(s);
  }
  return out;
}

std::vector<RefSample> sample_ref_with_heading(const CubicSegment& seg, double dt_track,
                                               Control2 u0, Control2 u2, double fallback_heading,
                                               double min_speed) {
  auto samples = sample_ref(seg, dt_track);
  double psi0 = fallback_heading;
  if (std::hypot(u0.vx, u0.vy) >= min_speed) {
    psi0 = fallback_heading + wrap_angle(std::atan2(u0.vy, u0.vx) - fallback_heading);
  }
  double psi2 = psi0;
  if (std::hypot(u2.vx, u2.vy) >= min_speed) {
    psi2 = psi0 + wrap_angle(std::atan2(u2.vy, u2.vx) - psi0);
  }
  const double rate = (psi2 - psi0) / seg.duration();
  const Cubic1 heading = fit_hermite_1d(psi0, rate, psi2, rate, seg.duration());
  for (auto& s : samples) {
    s.state.psi = heading.value(s.t);
    s.control.psi_dot = heading.derivative(s.t);
  }
  return samples;
}

}  // namespace riskmpc
