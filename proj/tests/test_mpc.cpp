#include <cmath>
#include <random>

#include "doctest.h"
#include "riskmpc/mpc.hpp"

using namespace riskmpc;
using Eigen::VectorXd;

namespace {

double min_clearance(const NlpSolution& sol, const Obstacle& o) {
  double c = 1e300;
  for (const auto& x : sol.states) c = std::min(c, std::hypot(x[0] - o.cx, x[1] - o.cy) - o.radius);
  return c;
}

std::vector<RefSample> constant_velocity_ref(State3 start, Control3 u, double dt, int count) {
  std::vector<RefSample> refs;
  for (int k = 0; k < count; ++k) {
    const double t = k * dt;
    refs.push_back({t, {start.x + u.vx * t, start.y + u.vy * t, start.psi + u.psi_dot * t}, u});
  }
  return refs;
}

}  // namespace

TEST_CASE("planner at the goal stays put") {
  PlannerConfig cfg;
  const auto sol = plan_step({2, 3}, {2, 3}, {}, std::vector<double>(cfg.horizon + 1, 0.7), cfg);
  CHECK(sol.status == SqpStatus::converged);
  for (const auto& u : sol.controls) CHECK(u.cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(std::abs(sol.objective) <= 1e-12);
}

TEST_CASE("far goal saturates the first velocity") {
  PlannerConfig cfg;
  const auto sol = plan_step({0, 0}, {8, 0}, {}, std::vector<double>(cfg.horizon + 1, 0.7), cfg);
  REQUIRE(sol.status == SqpStatus::converged);
  CHECK(sol.controls[0][0] == doctest::Approx(1.5).epsilon(1e-9));
  CHECK(std::abs(sol.controls[0][1]) <= 1e-9);
}

TEST_CASE("obstacle near the path keeps the inflated clearance") {
  PlannerConfig cfg;
  const Obstacle o{4, 0, 0.5};
  for (double sx : {1.5, 2.0, 2.5}) {
    const auto sol = plan_step({sx, 0.05}, {8, 0}, {o}, std::vector<double>(cfg.horizon + 1, 0.7), cfg);
    REQUIRE(sol.status == SqpStatus::converged);
    double eps = 0.0;
    for (double e : sol.slacks) eps = std::max(eps, e);
    // X_0 is fixed and not subject to the constraint
    NlpSolution tail = sol;
    tail.states.erase(tail.states.begin());
    CHECK(min_clearance(tail, o) >= 0.7 - eps - 1e-6);
  }
}

TEST_CASE("larger collision radius never plans closer") {
  PlannerConfig cfg;
  cfg.horizon = 15;
  const Obstacle o{3.0, 0.3, 0.5};
  double previous = -1e300;
  for (double r = 0.5; r <= 1.3; r += 0.1) {
    const auto sol = plan_step({1.0, 0.0}, {8, 0}, {o}, std::vector<double>(cfg.horizon + 1, r), cfg);
    REQUIRE(sol.status == SqpStatus::converged);
    const double c = min_clearance(sol, o);
    CHECK(c >= previous - 1e-6);
    previous = c;
  }
}

TEST_CASE("planned trajectories respect box and rate limits") {
  PlannerConfig cfg;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-4.0, 4.0);
  for (int i = 0; i < 20; ++i) {
    std::vector<Obstacle> obs{{u(rng), u(rng), 0.4}};
    const auto sol = plan_step({u(rng), u(rng)}, {u(rng), u(rng)}, obs, std::vector<double>(cfg.horizon + 1, 0.7), cfg);
    for (std::size_t k = 0; k < sol.controls.size(); ++k) {
      CHECK(sol.controls[k].cwiseAbs().maxCoeff() <= 1.5 + 1e-8);
      if (k > 0) CHECK((sol.controls[k] - sol.controls[k - 1]).cwiseAbs().maxCoeff() <= 3.0 * cfg.dt + 1e-8);
    }
    for (std::size_t k = 1; k < sol.states.size(); ++k) CHECK(sol.states[k].cwiseAbs().maxCoeff() <= 50.0 + 1e-8);
  }
}

TEST_CASE("tracker on a constant reference commands nothing") {
  TrackerConfig cfg;
  const State3 s{1, 2, 0.3};
  const auto out = track_step(s, constant_velocity_ref(s, {}, cfg.dt, 1), cfg);
  CHECK(std::abs(out.command.vx) <= 1e-12);
  CHECK(std::abs(out.command.vy) <= 1e-12);
  CHECK(std::abs(out.command.psi_dot) <= 1e-12);
}

TEST_CASE("tracker reproduces a feasible constant-velocity reference") {
  TrackerConfig cfg;
  const State3 s{0, 0, 0.2};
  const Control3 u{1.0 * std::cos(0.2), 1.0 * std::sin(0.2), 0.5};
  const auto out = track_step(s, constant_velocity_ref(s, u, cfg.dt, 41), cfg);
  CHECK(out.command.vx == doctest::Approx(u.vx).epsilon(1e-6));
  CHECK(out.command.vy == doctest::Approx(u.vy).epsilon(1e-6));
  CHECK(out.command.psi_dot == doctest::Approx(u.psi_dot).epsilon(1e-6));
}

TEST_CASE("tracker clamps lateral body velocity") {
  TrackerConfig cfg;
  const State3 s{0, 0, 0.0};
  const auto out = track_step(s, constant_velocity_ref(s, {0.0, 1.5, 0.0}, cfg.dt, 41), cfg);
  const double body_vy = -std::sin(s.psi) * out.command.vx + std::cos(s.psi) * out.command.vy;
  CHECK(body_vy == doctest::Approx(cfg.vy_limit).epsilon(1e-8));

  const State3 turned{0, 0, 1.0};
  const auto rotated = track_step(turned, constant_velocity_ref(turned, {-1.5 * std::sin(1.0), 1.5 * std::cos(1.0), 0.0}, cfg.dt, 41), cfg);
  const double lateral = -std::sin(1.0) * rotated.command.vx + std::cos(1.0) * rotated.command.vy;
  CHECK(lateral <= cfg.vy_limit + 1e-8);
  CHECK(lateral == doctest::Approx(cfg.vy_limit).epsilon(1e-8));
}

TEST_CASE("tracker is equivariant to planar offsets") {
  TrackerConfig cfg;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 20; ++i) {
    const State3 s{u(rng), u(rng), 3 * u(rng)};
    std::vector<RefSample> refs;
    for (int k = 0; k < 15; ++k)
      refs.push_back({k * cfg.dt, {s.x + 0.1 * u(rng), s.y + 0.1 * u(rng), s.psi + 0.2 * u(rng)}, {u(rng), u(rng), u(rng)}});
    const double ox = 5 * u(rng), oy = 5 * u(rng);
    State3 moved = s;
    moved.x += ox;
    moved.y += oy;
    auto moved_refs = refs;
    for (auto& r : moved_refs) {
      r.state.x += ox;
      r.state.y += oy;
    }
    const auto a = track_step(s, refs, cfg);
    const auto b = track_step(moved, moved_refs, cfg);
    CHECK(std::abs(a.command.vx - b.command.vx) <= 1e-9);
    CHECK(std::abs(a.command.vy - b.command.vy) <= 1e-9);
    CHECK(std::abs(a.command.psi_dot - b.command.psi_dot) <= 1e-9);
    for (std::size_t k = 0; k < a.solution.states.size(); ++k) {
      CHECK(std::abs(b.solution.states[k][0] - a.solution.states[k][0] - ox) <= 1e-9);
      CHECK(std::abs(b.solution.states[k][1] - a.solution.states[k][1] - oy) <= 1e-9);
    }
  }
}

TEST_CASE("tracker handles headings across the wrap seam") {
  TrackerConfig cfg;
  const State3 s{0, 0, 3.1};
  // reference heading is just across +-pi; the short way round is +0.08 rad
  auto refs = constant_velocity_ref({0, 0, -3.1032}, {}, cfg.dt, 11);
  const auto out = track_step(s, refs, cfg);
  CHECK(out.command.psi_dot > 0.0);
}

TEST_CASE("shift_warm_start drops the first stage") {
  NlpSolution s;
  for (int k = 0; k < 3; ++k) s.states.push_back(VectorXd::Constant(2, k));
  for (int k = 0; k < 2; ++k) s.controls.push_back(VectorXd::Constant(2, 10 + k));
  s.slacks = {0.1, 0.2};
  const auto t = shift_warm_start(s);
  CHECK(t.states[0][0] == 1);
  CHECK(t.states[1][0] == 2);
  CHECK(t.states[2][0] == 2);
  CHECK(t.controls[0][0] == 11);
  CHECK(t.controls[1][0] == 11);
  CHECK(t.slacks == std::vector<double>{0.2, 0.2});
  const auto twice = shift_warm_start(t);
  CHECK(twice.states[0][0] == 2);
  CHECK(twice.states[0][0] != t.states[0][0]);
}

TEST_CASE("reference from a plan spans two planning steps") {
  PlannerConfig cfg;
  const auto sol = plan_step({0, 0}, {8, 1}, {}, std::vector<double>(cfg.horizon + 1, 0.7), cfg);
  const auto refs = reference_from_plan(sol, cfg.dt, 0.005, 0.0);
  REQUIRE(refs.size() == 41);
  CHECK(refs.front().state.x == doctest::Approx(0.0));
  CHECK(refs.back().state.x == doctest::Approx(sol.states[2][0]));
  CHECK(refs.back().state.y == doctest::Approx(sol.states[2][1]));
  CHECK(refs.front().control.vx == doctest::Approx(sol.controls[0][0]));
}

TEST_CASE("invalid configurations are rejected") {
  PlannerConfig p;
  p.horizon = 1;
  CHECK_THROWS_AS(validate(p), std::invalid_argument);
  p = {};
  CHECK_THROWS_AS(plan_step({}, {1, 0}, {}, {0.7, 0.7}, p), std::invalid_argument);
  TrackerConfig t;
  t.dt = 0;
  CHECK_THROWS_AS(validate(t), std::invalid_argument);
  CHECK_THROWS_AS(track_step({}, {}, TrackerConfig{}), std::invalid_argument);
}
