#include "riskmpc/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace riskmpc {

const char* to_string(QpStatus status) {
  switch (status) {
    case QpStatus::optimal:
      return "optimal";
    case QpStatus::infeasible:
      return "infeasible";
    case QpStatus::iteration_limit:
      return "iteration-limit";
  }
  return "unknown";
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// Below this ratio ||J2' n|| / ||J' n|| a constraint normal is treated as
// lying in the span of the working set.
constexpr double kDependentRatio = 1e-10;

struct SparseRow {
  std::vector<int> index;
  std::vector<double> value;

  double dot(const Eigen::VectorXd& x) const {
    double s = 0.0;
    for (std::size_t k = 0; k < index.size(); ++k) s += value[k] * x[index[k]];
    return s;
  }
  double norm() const {
    double s = 0.0;
    for (double v : value) s += v * v;
    return std::sqrt(s);
  }
};

std::vector<SparseRow> sparse_rows(const Eigen::MatrixXd& m, double sign) {
  std::vector<SparseRow> rows(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (m(i, j) != 0.0) {
        rows[i].index.push_back(static_cast<int>(j));
        rows[i].value.push_back(sign * m(i, j));
      }
    }
  }
  return rows;
}

// Working-set factorization of the dual method: J J' = G^{-1}, and the first
// q columns of J' N equal the upper-triangular R, N being the active normals.
class WorkingSet {
 public:
  explicit WorkingSet(Eigen::MatrixXd j)
      : n_(static_cast<int>(j.rows())),
        j_(std::move(j)),
        r_(Eigen::MatrixXd::Zero(n_, n_)),
        d_(n_),
        z_(n_),
        rvec_(n_) {}

  int size() const { return q_; }
  const Eigen::VectorXd& z() const { return z_; }
  const Eigen::VectorXd& r() const { return rvec_; }

  // Computes z = J2 J2' n (primal direction) and r = R^{-1} J1' n (negative
  // dual direction). Returns false when n is dependent on the working set.
  bool direction(const SparseRow& normal) {
    d_.setZero();
    for (std::size_t k = 0; k < normal.index.size(); ++k) {
      d_.noalias() += normal.value[k] * j_.row(normal.index[k]).transpose();
    }
    const int free = n_ - q_;
    if (q_ > 0) {
      rvec_.head(q_) =
          r_.topLeftCorner(q_, q_).triangularView<Eigen::Upper>().solve(d_.head(q_));
    }
    const double tail = d_.tail(free).norm();
    if (free == 0 || tail <= kDependentRatio * d_.norm()) {
      z_.setZero();
      tail_sq_ = 0.0;
      return false;
    }
    z_.noalias() = j_.rightCols(free) * d_.tail(free);
    tail_sq_ = tail * tail;
    return true;
  }

  // n' z for the last computed direction.
  double curvature() const { return tail_sq_; }

  // Appends the normal used in the last direction() call.
  void add() {
    for (int col = n_ - 1; col > q_; --col) {
      const double a = d_[col - 1];
      const double b = d_[col];
      if (b == 0.0) continue;
      const double h = std::hypot(a, b);
      const double c = a / h;
      const double s = b / h;
      d_[col - 1] = h;
      d_[col] = 0.0;
      for (int k = 0; k < n_; ++k) {
        const double t1 = j_(k, col - 1);
        const double t2 = j_(k, col);
        j_(k, col - 1) = c * t1 + s * t2;
        j_(k, col) = -s * t1 + c * t2;
      }
    }
    r_.col(q_).head(q_ + 1) = d_.head(q_ + 1);
    ++q_;
  }

  void remove(int pos) {
    for (int c = pos; c < q_ - 1; ++c) r_.col(c).head(q_) = r_.col(c + 1).head(q_);
    r_.col(q_ - 1).setZero();
    --q_;
    for (int c = pos; c < q_; ++c) {
      const double a = r_(c, c);
      const double b = r_(c + 1, c);
      if (b == 0.0) continue;
      const double h = std::hypot(a, b);
      const double cs = a / h;
      const double sn = b / h;
      for (int k = c; k < q_; ++k) {
        const double t1 = r_(c, k);
        const double t2 = r_(c + 1, k);
        r_(c, k) = cs * t1 + sn * t2;
        r_(c + 1, k) = -sn * t1 + cs * t2;
      }
      r_(c + 1, c) = 0.0;
      for (int k = 0; k < n_; ++k) {
        const double t1 = j_(k, c);
        const double t2 = j_(k, c + 1);
        j_(k, c) = cs * t1 + sn * t2;
        j_(k, c + 1) = -sn * t1 + cs * t2;
      }
    }
  }

 private:
  int n_;
  int q_ = 0;
  Eigen::MatrixXd j_;
  Eigen::MatrixXd r_;
  Eigen::VectorXd d_;
  Eigen::VectorXd z_;
  Eigen::VectorXd rvec_;
  double tail_sq_ = 0.0;
};

void check_dimensions(const QpProblem& qp) {
  const auto n = qp.gradient.size();
  auto fail = [](const std::string& what) { throw std::invalid_argument("solve_qp: " + what); };
  if (qp.hessian.rows() != n || qp.hessian.cols() != n) fail("hessian must be n x n");
  if (qp.eq_matrix.rows() != qp.eq_rhs.size()) fail("equality rows mismatch");
  if (qp.eq_rhs.size() > 0 && qp.eq_matrix.cols() != n) fail("equality columns mismatch");
  if (qp.ineq_matrix.rows() != qp.ineq_rhs.size()) fail("inequality rows mismatch");
  if (qp.ineq_rhs.size() > 0 && qp.ineq_matrix.cols() != n) fail("inequality columns mismatch");
}

bool well_conditioned(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  if (llt.info() != Eigen::Success) return false;
  const Eigen::VectorXd diag = llt.matrixL().toDenseMatrix().diagonal();
  if (diag.size() == 0) return true;
  const double lo = diag.cwiseAbs().minCoeff();
  const double hi = diag.cwiseAbs().maxCoeff();
  return lo > 1e-7 * hi;
}

}  // namespace

QpSolution solve_qp(const QpProblem& qp, const QpOptions& options) {
  check_dimensions(qp);
  const int n = qp.num_variables();
  const int p = qp.num_equalities();
  const int m = qp.num_inequalities();

  // G is made positive definite, if needed, with the exact augmentation
  // G + rho A'A, g - rho A'b; the two agree on the equality manifold.
  Eigen::MatrixXd g_mat = qp.hessian;
  Eigen::VectorXd g_vec = qp.gradient;
  Eigen::LLT<Eigen::MatrixXd> llt(g_mat);
  if (!well_conditioned(llt) && p > 0) {
    const double rho = std::max(1.0, g_mat.diagonal().cwiseAbs().maxCoeff());
    g_mat.noalias() += rho * qp.eq_matrix.transpose() * qp.eq_matrix;
    g_vec.noalias() -= rho * qp.eq_matrix.transpose() * qp.eq_rhs;
    llt.compute(g_mat);
  }
  if (llt.info() != Eigen::Success) {
    throw std::invalid_argument("solve_qp: hessian is not positive definite on the feasible subspace");
  }

  const Eigen::MatrixXd j0 =
      llt.matrixU().solve(Eigen::MatrixXd::Identity(n, n));
  WorkingSet ws(j0);

  Eigen::VectorXd x = -llt.solve(g_vec);
  std::vector<int> active;  // constraint ids: [0, p) equalities, [p, p + m) inequalities
  std::vector<double> u;

  const auto eq_rows = sparse_rows(qp.eq_matrix, 1.0);
  // Inequalities are handled as s_i(x) = b_i - a_i' x >= 0 with normal -a_i.
  const auto in_rows = sparse_rows(qp.ineq_matrix, -1.0);
  std::vector<double> in_norm(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) in_norm[i] = std::max(in_rows[i].norm(), 1e-300);

  QpSolution sol;
  sol.status = QpStatus::optimal;

  for (int i = 0; i < p; ++i) {
    const double s = eq_rows[i].dot(x) - qp.eq_rhs[i];
    if (!ws.direction(eq_rows[i])) {
      if (std::abs(s) <= options.feasibility_tol * (1.0 + std::abs(qp.eq_rhs[i]))) continue;
      sol.status = QpStatus::infeasible;
      break;
    }
    const double t = -s / ws.curvature();
    x.noalias() += t * ws.z();
    for (std::size_t k = 0; k < u.size(); ++k) u[k] -= t * ws.r()[k];
    ws.add();
    active.push_back(i);
    u.push_back(t);
  }

  const int max_iter = options.max_iterations > 0 ? options.max_iterations : 10 * (n + m) + 100;
  int iter = 0;
  std::vector<char> is_active(static_cast<std::size_t>(m), 0);

  auto slack = [&](int i) { return qp.ineq_rhs[i] + in_rows[i].dot(x); };

  while (sol.status == QpStatus::optimal) {
    if (++iter > max_iter) {
      sol.status = QpStatus::iteration_limit;
      break;
    }
    int ip = -1;
    double worst = 0.0;
    for (int i = 0; i < m; ++i) {
      if (is_active[i]) continue;
      const double s = slack(i);
      if (s >= -options.feasibility_tol * (1.0 + std::abs(qp.ineq_rhs[i]))) continue;
      const double scaled = s / in_norm[i];
      if (scaled < worst) {
        worst = scaled;
        ip = i;
      }
    }
    if (ip < 0) break;

    double u_plus = 0.0;
    double s_ip = slack(ip);
    for (;;) {
      const bool primal = ws.direction(in_rows[ip]);
      const int q = ws.size();
      double t1 = kInf;
      int drop = -1;
      for (int k = 0; k < q; ++k) {
        if (active[k] < p) continue;
        const double rk = ws.r()[k];
        if (rk > 0.0 && u[k] / rk < t1) {
          t1 = u[k] / rk;
          drop = k;
        }
      }
      const double t2 = primal ? -s_ip / ws.curvature() : kInf;
      const double t = std::min(t1, t2);
      if (t == kInf) {
        sol.status = QpStatus::infeasible;
        break;
      }
      if (primal) x.noalias() += t * ws.z();
      for (int k = 0; k < q; ++k) u[k] -= t * ws.r()[k];
      u_plus += t;
      if (primal && t2 <= t1) {
        ws.add();
        active.push_back(p + ip);
        u.push_back(u_plus);
        is_active[ip] = 1;
        break;
      }
      is_active[active[drop] - p] = 0;
      active.erase(active.begin() + drop);
      u.erase(u.begin() + drop);
      ws.remove(drop);
      s_ip = slack(ip);
      if (++iter > max_iter) {
        sol.status = QpStatus::iteration_limit;
        break;
      }
    }
  }

  sol.iterations = iter;
  sol.x = x;
  sol.eq_multipliers = Eigen::VectorXd::Zero(p);
  sol.ineq_multipliers = Eigen::VectorXd::Zero(m);
  for (std::size_t k = 0; k < active.size(); ++k) {
    if (active[k] < p) {
      sol.eq_multipliers[active[k]] = -u[k];
    } else {
      sol.ineq_multipliers[active[k] - p] = u[k];
      sol.active_inequalities.push_back(active[k] - p);
    }
  }
  std::sort(sol.active_inequalities.begin(), sol.active_inequalities.end());
  sol.objective = 0.5 * x.dot(qp.hessian * x) + qp.gradient.dot(x);
  return sol;
}

double qp_kkt_residual(const QpProblem& qp, const QpSolution& sol) {
  const Eigen::VectorXd& x = sol.x;
  Eigen::VectorXd stat = qp.hessian * x + qp.gradient;
  double res = 0.0;
  if (qp.num_equalities() > 0) {
    stat.noalias() += qp.eq_matrix.transpose() * sol.eq_multipliers;
    res = std::max(res, (qp.eq_matrix * x - qp.eq_rhs).cwiseAbs().maxCoeff());
  }
  if (qp.num_inequalities() > 0) {
    stat.noalias() += qp.ineq_matrix.transpose() * sol.ineq_multipliers;
    const Eigen::VectorXd s = qp.ineq_rhs - qp.ineq_matrix * x;
    for (int i = 0; i < qp.num_inequalities(); ++i) {
      const double lam = sol.ineq_multipliers[i];
      res = std::max(res, std::max(0.0, -s[i]));
      res = std::max(res, std::max(0.0, -lam));
      res = std::max(res, std::abs(lam * s[i]));
    }
  }
  if (stat.size() > 0) res = std::max(res, stat.cwiseAbs().maxCoeff());
  return res;
}

}  // namespace riskmpc
