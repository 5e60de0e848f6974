#include <random>
#include <stdexcept>

#include "doctest.h"
#include "riskmpc/spline.hpp"

using namespace riskmpc;

TEST_CASE("stationary endpoints give a constant segment") {
  const auto seg = fit_hermite({1, 1}, {0, 0}, {1, 1}, {0, 0}, 0.37);
  CHECK(seg.x.a[0] == 1.0);
  CHECK(seg.y.a[0] == 1.0);
  for (int k = 1; k < 4; ++k) {
    CHECK(seg.x.a[k] == 0.0);
    CHECK(seg.y.a[k] == 0.0);
  }
  for (const auto& s : sample_ref(seg, 0.1)) {
    CHECK(s.state.x == 1.0);
    CHECK(s.state.y == 1.0);
    CHECK(s.control.vx == 0.0);
    CHECK(s.control.vy == 0.0);
  }
}

TEST_CASE("linear motion is its own cubic") {
  const double T = 0.8;
  const auto c = fit_hermite_1d(0.0, 1.0, T, 1.0, T);
  CHECK(c.a[1] == doctest::Approx(1.0));
  CHECK(std::abs(c.a[2]) < 1e-14);
  CHECK(std::abs(c.a[3]) < 1e-14);
}

TEST_CASE("smoothstep coefficients and samples") {
  const auto c = fit_hermite_1d(0.0, 0.0, 1.0, 0.0, 1.0);
  CHECK(c.a[0] == 0.0);
  CHECK(c.a[1] == 0.0);
  CHECK(c.a[2] == doctest::Approx(3.0));
  CHECK(c.a[3] == doctest::Approx(-2.0));

  const CubicSegment seg{c, fit_hermite_1d(0, 0, 0, 0, 1.0)};
  const auto s = sample_ref(seg, 0.5);
  REQUIRE(s.size() == 3);
  CHECK(s[0].state.x == doctest::Approx(0.0));
  CHECK(s[1].state.x == doctest::Approx(0.5));
  CHECK(s[2].state.x == doctest::Approx(1.0));
  CHECK(s[0].control.vx == doctest::Approx(0.0));
  CHECK(s[1].control.vx == doctest::Approx(1.5));
  CHECK(s[2].control.vx == doctest::Approx(0.0));
}

TEST_CASE("two planning steps at the tracking rate give 41 samples") {
  const auto seg = fit_hermite({0, 0}, {1, 0}, {0.2, 0}, {1, 0}, 2 * 0.1);
  CHECK(sample_ref(seg, 0.005).size() == 41);
}

TEST_CASE("invalid durations are rejected") {
  CHECK_THROWS_AS(fit_hermite_1d(0, 0, 1, 0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(fit_hermite_1d(0, 0, 1, 0, -1.0), std::invalid_argument);
  const auto seg = fit_hermite({0, 0}, {0, 0}, {1, 0}, {0, 0}, 0.2);
  CHECK_THROWS_AS(sample_ref(seg, 0.3), std::invalid_argument);
}

TEST_CASE("endpoint interpolation is exact for random boundary data") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::uniform_real_distribution<double> dur(0.01, 3.0);
  for (int i = 0; i < 1000; ++i) {
    const double p0 = u(rng), v0 = u(rng), p1 = u(rng), v1 = u(rng), T = dur(rng);
    const auto c = fit_hermite_1d(p0, v0, p1, v1, T);
    const double scale = 1.0 + std::abs(p0) + std::abs(p1) + T * (std::abs(v0) + std::abs(v1));
    CHECK(std::abs(c.value(0.0) - p0) <= 1e-12 * scale);
    CHECK(std::abs(c.value(T) - p1) <= 1e-12 * scale);
    CHECK(std::abs(c.derivative(0.0) - v0) <= 1e-12 * scale / T);
    CHECK(std::abs(c.derivative(T) - v1) <= 1e-12 * scale / T);
  }
}

TEST_CASE("reference velocity is the derivative of the reference position") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  const double h = 1e-4;
  for (int i = 0; i < 200; ++i) {
    const auto c = fit_hermite_1d(u(rng), u(rng), u(rng), u(rng), 0.2);
    for (double t = h; t < 0.2 - h; t += 0.01) {
      const double fd = (c.value(t + h) - c.value(t - h)) / (2 * h);
      // third derivative is 6 a3, so the central difference error is a3 h^2
      CHECK(std::abs(fd - c.derivative(t)) <= std::abs(c.a[3]) * h * h + 1e-9);
    }
  }
}

TEST_CASE("heading reference follows the segment velocity directions") {
  const Control2 u0{1.0, 0.0};
  const Control2 u2{0.0, 1.0};
  const auto seg = fit_hermite({0, 0}, u0, {0.1, 0.1}, u2, 0.2);
  const auto s = sample_ref_with_heading(seg, 0.005, u0, u2, 0.0);
  CHECK(s.front().state.psi == doctest::Approx(0.0));
  CHECK(s.back().state.psi == doctest::Approx(std::numbers::pi / 2));
  CHECK(s[7].control.psi_dot == doctest::Approx(std::numbers::pi / 2 / 0.2));

  // below the speed threshold the fallback heading is held
  const auto still = sample_ref_with_heading(fit_hermite({0, 0}, {}, {0, 0}, {}, 0.2), 0.005, {},
                                             {}, 2.5);
  for (const auto& r : still) CHECK(r.state.psi == doctest::Approx(2.5));

  // headings are unwrapped across the +-pi seam
  const Control2 a{-1.0, 0.01};
  const Control2 b{-1.0, -0.01};
  const auto seam = sample_ref_with_heading(fit_hermite({0, 0}, a, {-0.2, 0}, b, 0.2), 0.005, a,
                                            b, 3.1);
  CHECK(std::abs(seam.back().state.psi - seam.front().state.psi) < 0.1);
}
