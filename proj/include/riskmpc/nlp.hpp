#pragma once

#include <Eigen/Dense>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "riskmpc/geometry.hpp"
#include "riskmpc/qp.hpp"

namespace riskmpc {

enum class Phase { planning, tracking };

/// Body-frame velocity limits |Rot(theta_k) [vx, vy]| <= [vx_limit, vy_limit]
/// applied to the first two control components at every step.
struct BodyFrameLimits {
  double vx_limit = 0.0;
  double vy_limit = 0.0;
  /// Rotation angle per control step; size N.
  std::vector<double> heading;
};

/// Multiple-shooting transcription of one MPC phase.
///
/// Decision vector: X_0..X_N (nx each), U_0..U_{N-1} (nu each) and, in the
/// planning phase, one slack eps_k per control step shared by all
/// obstacles.  The collision constraint tied to eps_k acts on X_{k+1} with
/// radius r_sigma[k+1].
struct NlpProblem {
  Phase phase = Phase::planning;
  int horizon = 0;
  double dt = 0.0;
  Eigen::MatrixXd a;
  Eigen::MatrixXd b;
  Eigen::VectorXd initial_state;
  Eigen::MatrixXd q;
  /// Control weight; in the planning phase it is (nu+1)x(nu+1) and its last
  /// row/column weights the slack.
  Eigen::MatrixXd r;
  /// N+1 state references (the goal, repeated, when planning).
  std::vector<Eigen::VectorXd> state_ref;
  /// N control references (zero when planning).
  std::vector<Eigen::VectorXd> control_ref;
  /// Symmetric box limits; +inf disables a component.
  Eigen::VectorXd state_limit;
  Eigen::VectorXd control_limit;
  /// Acceleration limit between consecutive controls, scaled by dt.
  Eigen::VectorXd accel_limit;
  std::optional<BodyFrameLimits> body_limits;
  std::vector<Obstacle> obstacles;
  /// Collision-boundary radius per state, size N+1.
  std::vector<double> r_sigma;

  int nx() const { return static_cast<int>(a.rows()); }
  int nu() const { return static_cast<int>(b.cols()); }
  bool has_slack() const { return phase == Phase::planning; }
  int num_variables() const;
  /// Whether X_0 enters the cost (tracking) or not (planning).
  bool costs_initial_state() const { return phase == Phase::tracking; }
};

/// Validates a draft problem; throws std::invalid_argument on dimension
/// mismatch, negative limits, asymmetric or negative-diagonal weights, or a
/// constraint set that does not belong to the phase.
NlpProblem build_problem(NlpProblem draft);

enum class SqpStatus { converged, max_iterations, infeasible_relaxed };

const char* to_string(SqpStatus status);

struct NlpSolution {
  std::vector<Eigen::VectorXd> states;
  std::vector<Eigen::VectorXd> controls;
  std::vector<double> slacks;
  double objective = 0.0;
  double kkt_residual = 0.0;
  double max_defect = 0.0;
  int iterations = 0;
  SqpStatus status = SqpStatus::max_iterations;
};

struct CollisionLinearization {
  Eigen::Vector2d gradient;
  /// Affine model: margin(q) ~= gradient . q + constant (slack excluded).
  double constant = 0.0;
  /// Set when the robot sits on the obstacle center and the +x fallback
  /// direction was used.
  bool degenerate = false;
};

CollisionLinearization linearize_collision(double x, double y, const Obstacle& obs, double r_sigma);

struct SqpTraceRecord {
  int iteration = 0;
  double objective = 0.0;
  double kkt_residual = 0.0;
  double max_margin = 0.0;
  double step_length = 0.0;
};

/// One JSON object per line.
void write_trace_line(std::ostream& os, const SqpTraceRecord& rec);

struct SqpOptions {
  double kkt_tol = 1e-6;
  double defect_tol = 1e-8;
  int max_iterations = 50;
  double line_search_contraction = 0.5;
  double armijo = 1e-4;
  double merit_factor = 10.0;
  std::function<void(const SqpTraceRecord&)> trace;
};

/// Sequential quadratic programming with the exact cost Hessian and
/// collision constraints re-linearized every iteration.  Throws
/// std::runtime_error if an iterate becomes non-finite.
NlpSolution solve_sqp(const NlpProblem& p, const std::optional<NlpSolution>& warm_start = std::nullopt,
                      const SqpOptions& options = {});

/// Collision margin of every (step, obstacle) pair of a solution, including
/// the slack, in row-major (step, obstacle) order.
std::vector<double> collision_margins(const NlpProblem& p, const NlpSolution& sol);

}  // namespace riskmpc
