#pragma once

#include <Eigen/Dense>
#include <vector>

namespace riskmpc {

/// Convex quadratic program
///
///   minimize    1/2 x' H x + g' x
///   subject to  A_eq x  = b_eq
///               A_in x <= b_in
///
/// H must be symmetric positive semidefinite and positive definite on the
/// null space of A_eq.
struct QpProblem {
  Eigen::MatrixXd hessian;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd eq_matrix;
  Eigen::VectorXd eq_rhs;
  Eigen::MatrixXd ineq_matrix;
  Eigen::VectorXd ineq_rhs;

  int num_variables() const { return static_cast<int>(gradient.size()); }
  int num_equalities() const { return static_cast<int>(eq_rhs.size()); }
  int num_inequalities() const { return static_cast<int>(ineq_rhs.size()); }
};

enum class QpStatus { optimal, infeasible, iteration_limit };

const char* to_string(QpStatus status);

/// Primal solution plus multipliers in the sign convention
///   H x + g + A_eq' nu + A_in' lambda = 0,  lambda >= 0.
struct QpSolution {
  QpStatus status = QpStatus::iteration_limit;
  Eigen::VectorXd x;
  Eigen::VectorXd eq_multipliers;
  Eigen::VectorXd ineq_multipliers;
  double objective = 0.0;
  int iterations = 0;
  std::vector<int> active_inequalities;
};

struct QpOptions {
  /// Violation below this (scaled by 1 + |rhs|) counts as satisfied.
  double feasibility_tol = 1e-11;
  /// 0 selects 10 (n + m) + 100.
  int max_iterations = 0;
};

/// Dense dual active-set solver (Goldfarb-Idnani).  Throws
/// std::invalid_argument on inconsistent dimensions or when the Hessian is
/// not positive definite on the equality-constraint null space.
QpSolution solve_qp(const QpProblem& qp, const QpOptions& options = {});

/// Largest violation among stationarity, primal feasibility, dual
/// feasibility and complementarity, all in the infinity norm.
double qp_kkt_residual(const QpProblem& qp, const QpSolution& sol);

}  // namespace riskmpc
