#include "riskmpc/mpc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace riskmpc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void validate(const PlannerConfig& cfg) {
  if (cfg.horizon < 2) throw std::invalid_argument("planner horizon must be at least 2");
  if (!(cfg.dt > 0.0)) throw std::invalid_argument("planner dt must be positive");
}

void validate(const TrackerConfig& cfg) {
  if (cfg.horizon < 1) throw std::invalid_argument("tracker horizon must be at least 1");
  if (!(cfg.dt > 0.0)) throw std::invalid_argument("tracker dt must be positive");
  if (cfg.vx_limit < 0.0 || cfg.vy_limit < 0.0 || cfg.yaw_rate_limit < 0.0)
    throw std::invalid_argument("tracker limits must be non-negative");
}

NlpSolution plan_step(State2 current, State2 goal, const std::vector<Obstacle>& obstacles,
                      const std::vector<double>& r_sigma_horizon, const PlannerConfig& cfg,
                      const std::optional<NlpSolution>& warm, const SqpOptions& options) {
  validate(cfg);
  if (static_cast<int>(r_sigma_horizon.size()) != cfg.horizon + 1)
    throw std::invalid_argument("plan_step: r_sigma horizon must have N+1 entries");
  NlpProblem p;
  p.phase = Phase::planning;
  p.horizon = cfg.horizon;
  p.dt = cfg.dt;
  p.a = MatrixXd::Identity(2, 2);
  p.b = cfg.dt * MatrixXd::Identity(2, 2);
  p.initial_state = Eigen::Vector2d(current.x, current.y);
  p.q = cfg.q;
  p.r = cfg.r;
  p.state_ref.assign(cfg.horizon + 1, Eigen::Vector2d(goal.x, goal.y));
  p.state_limit = cfg.state_limit;
  p.control_limit = cfg.control_limit;
  p.accel_limit = cfg.accel_limit;
  p.obstacles = obstacles;
  p.r_sigma = r_sigma_horizon;
  return solve_sqp(build_problem(std::move(p)), warm, options);
}

TrackResult track_step(State3 current, const std::vector<RefSample>& refs, const TrackerConfig& cfg,
                       const std::optional<NlpSolution>& warm) {
  validate(cfg);
  if (refs.empty()) throw std::invalid_argument("track_step: empty reference");
  const int n = cfg.horizon;
  NlpProblem p;
  p.phase = Phase::tracking;
  p.horizon = n;
  p.dt = cfg.dt;
  p.a = MatrixXd::Identity(3, 3);
  p.b = cfg.dt * MatrixXd::Identity(3, 3);
  p.initial_state = Eigen::Vector3d(current.x, current.y, current.psi);
  p.q = cfg.q;
  p.r = cfg.r;

  // headings are unwrapped so that the reference starts within pi of the
  // current heading and never jumps by more than pi between samples
  double previous = current.psi;
  BodyFrameLimits body{cfg.vx_limit, cfg.vy_limit, {}};
  for (int k = 0; k <= n; ++k) {
    const RefSample& s = refs[static_cast<std::size_t>(std::min<int>(k, static_cast<int>(refs.size()) - 1))];
    const double psi = previous + wrap_angle(s.state.psi - previous);
    previous = psi;
    p.state_ref.push_back(Eigen::Vector3d(s.state.x, s.state.y, psi));
    if (k < n) {
      p.control_ref.push_back(Eigen::Vector3d(s.control.vx, s.control.vy, s.control.psi_dot));
      body.heading.push_back(k == 0 ? current.psi : psi);
    }
  }
  p.body_limits = body;
  const double inf = std::numeric_limits<double>::infinity();
  p.state_limit = VectorXd::Constant(3, inf);
  p.control_limit = Eigen::Vector3d(inf, inf, cfg.yaw_rate_limit);
  p.accel_limit = cfg.accel_limit;

  TrackResult out;
  out.solution = solve_sqp(build_problem(std::move(p)), warm);
  const VectorXd& u = out.solution.controls.front();
  out.command = {u[0], u[1], u[2]};
  return out;
}

NlpSolution shift_warm_start(const NlpSolution& prev) {
  auto shift = [](auto& v) {
    if (v.size() < 2) return;
    std::rotate(v.begin(), v.begin() + 1, v.end());
    v.back() = v[v.size() - 2];
  };
  NlpSolution next = prev;
  shift(next.states);
  shift(next.controls);
  shift(next.slacks);
  return next;
}

std::vector<RefSample> reference_from_plan(const NlpSolution& plan, double dt_plan, double dt_track,
                                           double current_heading) {
  if (plan.states.size() < 3 || plan.controls.size() < 2)
    throw std::invalid_argument("reference_from_plan: plan needs at least two steps");
  const auto& x0 = plan.states[0];
  const auto& x2 = plan.states[2];
  const auto& c0 = plan.controls[0];
  const auto& c2 = plan.controls[std::min<std::size_t>(2, plan.controls.size() - 1)];
  const Control2 u0{c0[0], c0[1]};
  const Control2 u2{c2[0], c2[1]};
  const auto seg = fit_hermite({x0[0], x0[1]}, u0, {x2[0], x2[1]}, u2, 2.0 * dt_plan);
  return sample_ref_with_heading(seg, dt_track, u0, u2, current_heading);
}

}  // namespace riskmpc
