#pragma once

#include <array>
#include <vector>

#include "riskmpc/geometry.hpp"

namespace riskmpc {

/// One-dimensional cubic p(t) = a0 + a1 t + a2 t^2 + a3 t^3 on [0, duration].
struct Cubic1 {
  std::array<double, 4> a{};
  double duration = 0.0;

  double value(double t) const;
  double derivative(double t) const;
};

/// Hermite cubic through (p0, v0) at t = 0 and (p1, v1) at t = duration.
Cubic1 fit_hermite_1d(double p0, double v0, double p1, double v1, double duration);

/// Planar reference segment, one cubic per axis.
struct CubicSegment {
  Cubic1 x;
  Cubic1 y;

  double duration() const { return x.duration; }
};

CubicSegment fit_hermite(State2 x0, Control2 u0, State2 x2, Control2 u2, double duration);

struct RefSample {
  double t = 0.0;
  State3 state;
  Control3 control;
};

/// Samples at t = 0, dt, 2 dt, ... <= duration. Heading is left at zero; use
/// sample_ref_with_heading for the tracking phase.
std::vector<RefSample> sample_ref(const CubicSegment& seg, double dt_track);

/// Adds a heading reference interpolated between the headings implied by the
/// segment end velocities.  Below `min_speed` an end keeps `fallback_heading`.
/// The interpolation is a Hermite cubic whose end slopes are both the mean
/// turn rate, so the heading varies linearly across the segment.
std::vector<RefSample> sample_ref_with_heading(const CubicSegment& seg, double dt_track,
                                               Control2 u0, Control2 u2, double fallback_heading,
                                               double min_speed = 0.05);

}  // namespace riskmpc
