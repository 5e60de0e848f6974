#include "riskmpc/nlp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>

namespace riskmpc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

const char* to_string(SqpStatus status) {
  switch (status) {
    case SqpStatus::converged:
      return "converged";
    case SqpStatus::max_iterations:
      return "max-iterations";
    case SqpStatus::infeasible_relaxed:
      return "infeasible-relaxed";
  }
  return "unknown";
}

int NlpProblem::num_variables() const {
  return (horizon + 1) * nx() + horizon * nu() + (has_slack() ? horizon : 0);
}

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("build_problem: " + what);
}

void check_weight(const MatrixXd& w, int dim, const char* name) {
  require(w.rows() == dim && w.cols() == dim, std::string(name) + " has wrong dimensions");
  require((w - w.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + w.cwiseAbs().maxCoeff()),
          std::string(name) + " must be symmetric");
  require((w.diagonal().array() >= 0.0).all(), std::string(name) + " must have non-negative diagonal");
}

void check_limit(const VectorXd& v, int dim, const char* name) {
  require(v.size() == dim, std::string(name) + " has wrong dimension");
  require((v.array() >= 0.0).all(), std::string(name) + " must be non-negative");
}

}  // namespace

NlpProblem build_problem(NlpProblem p) {
  require(p.horizon >= 1, "horizon must be at least 1");
  require(p.dt > 0.0, "dt must be positive");
  const int nx = p.nx();
  const int nu = p.nu();
  require(nx >= 1 && p.a.cols() == nx, "A must be square");
  require(p.b.rows() == nx && nu >= 1, "B rows must match state dimension");
  require(p.initial_state.size() == nx, "initial state dimension mismatch");
  check_weight(p.q, nx, "Q");
  check_weight(p.r, nu + (p.has_slack() ? 1 : 0), "R");
  require(static_cast<int>(p.state_ref.size()) == p.horizon + 1, "state_ref must have N+1 entries");
  for (const auto& r : p.state_ref) require(r.size() == nx, "state_ref entry dimension mismatch");
  if (p.control_ref.empty()) p.control_ref.assign(p.horizon, VectorXd::Zero(nu));
  require(static_cast<int>(p.control_ref.size()) == p.horizon, "control_ref must have N entries");
  for (const auto& r : p.control_ref) require(r.size() == nu, "control_ref entry dimension mismatch");
  check_limit(p.state_limit, nx, "state_limit");
  check_limit(p.control_limit, nu, "control_limit");
  check_limit(p.accel_limit, nu, "accel_limit");

  if (p.phase == Phase::planning) {
    require(!p.body_limits.has_value(), "planning phase has no body-frame constraint");
    require(static_cast<int>(p.r_sigma.size()) == p.horizon + 1, "r_sigma must have N+1 entries");
    for (double r : p.r_sigma) require(r >= 0.0 && std::isfinite(r), "r_sigma must be finite and >= 0");
    for (const auto& o : p.obstacles) require(o.radius >= 0.0, "obstacle radius must be >= 0");
    require(nx >= 2, "collision constraints need a planar position");
  } else {
    require(p.obstacles.empty(), "tracking phase has no collision constraint");
    require(p.body_limits.has_value(), "tracking phase needs body-frame limits");
    require(nu >= 2, "body-frame limits need planar velocity controls");
    require(p.body_limits->vx_limit >= 0.0 && p.body_limits->vy_limit >= 0.0,
            "body-frame limits must be non-negative");
    require(static_cast<int>(p.body_limits->heading.size()) == p.horizon,
            "body-frame heading must have N entries");
  }
  for (const auto& v : p.initial_state) require(std::isfinite(v), "initial state must be finite");
  return p;
}

CollisionLinearization linearize_collision(double x, double y, const Obstacle& obs, double r_sigma) {
  CollisionLinearization lin;
  const double dx = x - obs.cx;
  const double dy = y - obs.cy;
  const double dist = std::hypot(dx, dy);
  Eigen::Vector2d outward(1.0, 0.0);
  if (dist > 0.0) {
    outward = {dx / dist, dy / dist};
  } else {
    lin.degenerate = true;
  }
  lin.gradient = -outward;
  const double value = -dist + r_sigma + obs.radius;
  lin.constant = value - lin.gradient.dot(Eigen::Vector2d(x, y));
  return lin;
}

void write_trace_line(std::ostream& os, const SqpTraceRecord& rec) {
  os << "{\"iteration\":" << rec.iteration << ",\"objective\":" << rec.objective
     << ",\"kkt_residual\":" << rec.kkt_residual << ",\"max_margin\":" << rec.max_margin
     << ",\"step_length\":" << rec.step_length << "}\n";
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Layout {
  int nx = 0, nu = 0, horizon = 0;
  bool slack = false;

  int x(int k) const { return k * nx; }
  int u(int k) const { return (horizon + 1) * nx + k * nu; }
  int eps(int k) const { return (horizon + 1) * nx + horizon * nu + k; }
  int size() const { return (horizon + 1) * nx + horizon * nu + (slack ? horizon : 0); }
};

struct CollisionPair {
  int step;  // constrains X_{step+1} with eps_step
  int obstacle;
};

// Quadratic cost and linear constraints of the transcription.  Collision
// rows are appended per SQP iteration.
struct Transcription {
  Layout lay;
  MatrixXd hessian;
  VectorXd gradient;
  double constant = 0.0;
  MatrixXd eq;
  VectorXd eq_rhs;
  MatrixXd lin;
  VectorXd lin_rhs;
  std::vector<CollisionPair> pairs;

  double cost(const VectorXd& z) const { return 0.5 * z.dot(hessian * z) + gradient.dot(z) + constant; }
};

class RowBuilder {
 public:
  explicit RowBuilder(int n) : n_(n) {}
  // returns a zeroed row to fill and records the rhs
  Eigen::Ref<Eigen::RowVectorXd> add(double rhs) {
    rows_.emplace_back(Eigen::RowVectorXd::Zero(n_));
    rhs_.push_back(rhs);
    return rows_.back();
  }
  void finish(MatrixXd& m, VectorXd& v) const {
    m.resize(static_cast<Eigen::Index>(rows_.size()), n_);
    v.resize(static_cast<Eigen::Index>(rhs_.size()));
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      m.row(static_cast<Eigen::Index>(i)) = rows_[i];
      v[static_cast<Eigen::Index>(i)] = rhs_[i];
    }
  }

 private:
  int n_;
  std::vector<Eigen::RowVectorXd> rows_;
  std::vector<double> rhs_;
};

Transcription transcribe(const NlpProblem& p) {
  Transcription t;
  Layout& lay = t.lay;
  lay.nx = p.nx();
  lay.nu = p.nu();
  lay.horizon = p.horizon;
  lay.slack = p.has_slack();
  const int n = lay.size();
  const int nx = lay.nx;
  const int nu = lay.nu;
  const int N = p.horizon;

  t.hessian = MatrixXd::Zero(n, n);
  t.gradient = VectorXd::Zero(n);
  for (int k = p.costs_initial_state() ? 0 : 1; k <= N; ++k) {
    const int i = lay.x(k);
    t.hessian.block(i, i, nx, nx) += 2.0 * p.q;
    t.gradient.segment(i, nx) -= 2.0 * p.q * p.state_ref[k];
    t.constant += p.state_ref[k].dot(p.q * p.state_ref[k]);
  }
  const int nr = static_cast<int>(p.r.rows());
  for (int k = 0; k < N; ++k) {
    std::vector<int> idx;
    VectorXd ref = VectorXd::Zero(nr);
    for (int j = 0; j < nu; ++j) idx.push_back(lay.u(k) + j);
    ref.head(nu) = p.control_ref[k];
    if (lay.slack) idx.push_back(lay.eps(k));
    const VectorXd rref = p.r * ref;
    for (int a = 0; a < nr; ++a) {
      for (int b = 0; b < nr; ++b) t.hessian(idx[a], idx[b]) += 2.0 * p.r(a, b);
      t.gradient[idx[a]] -= 2.0 * rref[a];
    }
    t.constant += ref.dot(rref);
  }

  RowBuilder eq(n);
  for (int i = 0; i < nx; ++i) eq.add(p.initial_state[i])[lay.x(0) + i] = 1.0;
  for (int k = 0; k < N; ++k) {
    for (int i = 0; i < nx; ++i) {
      auto row = eq.add(0.0);
      row[lay.x(k + 1) + i] = 1.0;
      for (int j = 0; j < nx; ++j) row[lay.x(k) + j] -= p.a(i, j);
      for (int j = 0; j < nu; ++j) row[lay.u(k) + j] -= p.b(i, j);
    }
  }
  eq.finish(t.eq, t.eq_rhs);

  RowBuilder in(n);
  auto bound = [&](int var, double limit) {
    if (!std::isfinite(limit)) return;
    in.add(limit)[var] = 1.0;
    in.add(limit)[var] = -1.0;
  };
  // Constraint II
  for (int k = 1; k <= N; ++k)
    for (int i = 0; i < nx; ++i) bound(lay.x(k) + i, p.state_limit[i]);
  for (int k = 0; k < N; ++k)
    for (int j = 0; j < nu; ++j) bound(lay.u(k) + j, p.control_limit[j]);
  if (lay.slack)
    for (int k = 0; k < N; ++k) in.add(0.0)[lay.eps(k)] = -1.0;
  // Constraint III
  for (int k = 0; k + 1 < N; ++k) {
    for (int j = 0; j < nu; ++j) {
      const double lim = p.accel_limit[j] * p.dt;
      if (!std::isfinite(lim)) continue;
      for (double sign : {1.0, -1.0}) {
        auto row = in.add(lim);
        row[lay.u(k + 1) + j] = sign;
        row[lay.u(k) + j] = -sign;
      }
    }
  }
  // Constraint IV
  if (p.body_limits) {
    const auto& bl = *p.body_limits;
    for (int k = 0; k < N; ++k) {
      const double c = std::cos(bl.heading[k]);
      const double s = std::sin(bl.heading[k]);
      for (double sign : {1.0, -1.0}) {
        if (std::isfinite(bl.vx_limit)) {
          auto row = in.add(bl.vx_limit);
          row[lay.u(k)] = sign * c;
          row[lay.u(k) + 1] = sign * s;
        }
        if (std::isfinite(bl.vy_limit)) {
          auto row = in.add(bl.vy_limit);
          row[lay.u(k)] = -sign * s;
          row[lay.u(k) + 1] = sign * c;
        }
      }
    }
  }
  in.finish(t.lin, t.lin_rhs);

  // Constraint V
  for (int k = 0; k < N; ++k)
    for (int o = 0; o < static_cast<int>(p.obstacles.size()); ++o) t.pairs.push_back({k, o});
  return t;
}

double pair_margin(const NlpProblem& p, const Transcription& t, const CollisionPair& c, const VectorXd& z) {
  const int i = t.lay.x(c.step + 1);
  return collision_margin(z[i], z[i + 1], p.obstacles[c.obstacle], p.r_sigma[c.step + 1],
                          z[t.lay.eps(c.step)]);
}

struct Violation {
  double linear = 0.0;     // l1 over linear equalities and inequalities
  double collision = 0.0;  // l1 over collision constraints
  double max_abs = 0.0;
  double total() const { return linear + collision; }
};

Violation violation(const NlpProblem& p, const Transcription& t, const VectorXd& z) {
  Violation v;
  if (t.eq.rows() > 0) {
    const VectorXd r = (t.eq * z - t.eq_rhs).cwiseAbs();
    v.linear += r.sum();
    v.max_abs = std::max(v.max_abs, r.maxCoeff());
  }
  if (t.lin.rows() > 0) {
    const VectorXd r = (t.lin * z - t.lin_rhs).cwiseMax(0.0);
    v.linear += r.sum();
    v.max_abs = std::max(v.max_abs, r.maxCoeff());
  }
  for (const auto& c : t.pairs) {
    const double m = std::max(0.0, pair_margin(p, t, c, z));
    v.collision += m;
    v.max_abs = std::max(v.max_abs, m);
  }
  return v;
}

VectorXd pack(const Layout& lay, const NlpSolution& s) {
  VectorXd z = VectorXd::Zero(lay.size());
  for (int k = 0; k <= lay.horizon; ++k) z.segment(lay.x(k), lay.nx) = s.states[k];
  for (int k = 0; k < lay.horizon; ++k) z.segment(lay.u(k), lay.nu) = s.controls[k];
  if (lay.slack)
    for (int k = 0; k < lay.horizon; ++k) z[lay.eps(k)] = s.slacks[k];
  return z;
}

bool warm_start_fits(const Layout& lay, const NlpSolution& s) {
  if (static_cast<int>(s.states.size()) != lay.horizon + 1) return false;
  if (static_cast<int>(s.controls.size()) != lay.horizon) return false;
  if (lay.slack && static_cast<int>(s.slacks.size()) != lay.horizon) return false;
  for (const auto& x : s.states)
    if (x.size() != lay.nx) return false;
  for (const auto& u : s.controls)
    if (u.size() != lay.nu) return false;
  return true;
}

NlpSolution unpack(const Layout& lay, const VectorXd& z) {
  NlpSolution s;
  for (int k = 0; k <= lay.horizon; ++k) s.states.push_back(z.segment(lay.x(k), lay.nx));
  for (int k = 0; k < lay.horizon; ++k) s.controls.push_back(z.segment(lay.u(k), lay.nu));
  s.slacks.assign(static_cast<std::size_t>(lay.horizon), 0.0);
  if (lay.slack)
    for (int k = 0; k < lay.horizon; ++k) s.slacks[k] = z[lay.eps(k)];
  return s;
}

// KKT residual of the NLP at z for multipliers of the linear equalities, the
// linear inequalities and the collision constraints.
double nlp_kkt_residual(const NlpProblem& p, const Transcription& t, const VectorXd& z,
                        const VectorXd& nu_eq, const VectorXd& lam_lin, const VectorXd& lam_col) {
  VectorXd stat = t.hessian * z + t.gradient;
  double res = 0.0;
  if (t.eq.rows() > 0) {
    stat.noalias() += t.eq.transpose() * nu_eq;
    res = std::max(res, (t.eq * z - t.eq_rhs).cwiseAbs().maxCoeff());
  }
  if (t.lin.rows() > 0) {
    stat.noalias() += t.lin.transpose() * lam_lin;
    const VectorXd s = t.lin_rhs - t.lin * z;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      res = std::max(res, std::max(0.0, -s[i]));
      res = std::max(res, std::abs(lam_lin[i] * s[i]));
    }
  }
  for (std::size_t j = 0; j < t.pairs.size(); ++j) {
    const auto& c = t.pairs[j];
    const int i = t.lay.x(c.step + 1);
    const auto lin = linearize_collision(z[i], z[i + 1], p.obstacles[c.obstacle], p.r_sigma[c.step + 1]);
    const double lam = lam_col[static_cast<Eigen::Index>(j)];
    stat[i] += lam * lin.gradient[0];
    stat[i + 1] += lam * lin.gradient[1];
    stat[t.lay.eps(c.step)] -= lam;
    const double m = pair_margin(p, t, c, z);
    res = std::max(res, std::max(0.0, m));
    res = std::max(res, std::abs(lam * m));
  }
  return std::max(res, stat.cwiseAbs().maxCoeff());
}

double max_defect(const Transcription& t, const VectorXd& z) {
  if (t.eq.rows() <= t.lay.nx) return 0.0;
  const Eigen::Index rows = t.eq.rows() - t.lay.nx;
  return (t.eq.bottomRows(rows) * z - t.eq_rhs.tail(rows)).cwiseAbs().maxCoeff();
}

double max_margin(const NlpProblem& p, const Transcription& t, const VectorXd& z) {
  double m = -kInf;
  for (const auto& c : t.pairs) m = std::max(m, pair_margin(p, t, c, z));
  return m;
}

}  // namespace

std::vector<double> collision_margins(const NlpProblem& p, const NlpSolution& sol) {
  std::vector<double> out;
  for (int k = 0; k < p.horizon; ++k) {
    for (const auto& o : p.obstacles) {
      const auto& x = sol.states[k + 1];
      out.push_back(collision_margin(x[0], x[1], o, p.r_sigma[k + 1], sol.slacks[k]));
    }
  }
  return out;
}

NlpSolution solve_sqp(const NlpProblem& problem, const std::optional<NlpSolution>& warm_start,
                      const SqpOptions& options) {
  const NlpProblem p = build_problem(problem);
  const Transcription t = transcribe(p);
  const Layout& lay = t.lay;
  const int n = lay.size();

  VectorXd z;
  if (warm_start && warm_start_fits(lay, *warm_start)) {
    z = pack(lay, *warm_start);
  } else {
    // zero controls, states rolled out from the initial state
    z = VectorXd::Zero(n);
    VectorXd x = p.initial_state;
    for (int k = 0; k <= p.horizon; ++k) {
      z.segment(lay.x(k), lay.nx) = x;
      x = p.a * x;
    }
  }
  if (lay.slack) {
    for (int k = 0; k < p.horizon; ++k) {
      z[lay.eps(k)] = std::max(z[lay.eps(k)], 0.0);
    }
  }

  const int n_lin = static_cast<int>(t.lin.rows());
  const int n_col = static_cast<int>(t.pairs.size());

  // Heavy slack weights make the Hessian badly scaled; the QP is solved in
  // variables z = D y with D normalizing the large diagonal entries.
  VectorXd scale = VectorXd::Ones(n);
  for (int i = 0; i < n; ++i)
    if (t.hessian(i, i) > 1.0) scale[i] = 1.0 / std::sqrt(t.hessian(i, i));
  const auto d = scale.asDiagonal();

  QpProblem qp;
  qp.hessian = d * t.hessian * d;
  qp.gradient = d * t.gradient;
  qp.eq_matrix = t.eq * d;
  qp.eq_rhs = t.eq_rhs;
  qp.ineq_matrix.resize(n_lin + n_col, n);
  qp.ineq_rhs.resize(n_lin + n_col);
  qp.ineq_matrix.topRows(n_lin) = t.lin * d;
  qp.ineq_rhs.head(n_lin) = t.lin_rhs;
  qp.ineq_matrix.bottomRows(n_col).setZero();

  double merit_weight = 0.0;
  NlpSolution best;
  SqpStatus status = SqpStatus::max_iterations;
  double kkt = kInf;
  int iter = 0;

  while (iter < options.max_iterations) {
    ++iter;
    for (int j = 0; j < n_col; ++j) {
      const auto& c = t.pairs[j];
      const int i = lay.x(c.step + 1);
      const auto lin = linearize_collision(z[i], z[i + 1], p.obstacles[c.obstacle], p.r_sigma[c.step + 1]);
      auto row = qp.ineq_matrix.row(n_lin + j);
      row.setZero();
      row[i] = lin.gradient[0] * scale[i];
      row[i + 1] = lin.gradient[1] * scale[i + 1];
      row[lay.eps(c.step)] = -scale[lay.eps(c.step)];
      qp.ineq_rhs[n_lin + j] = -lin.constant;
    }
    if (!z.allFinite() || !qp.gradient.allFinite() || !qp.ineq_matrix.allFinite() || !qp.ineq_rhs.allFinite() ||
        !qp.eq_rhs.allFinite()) {
      throw std::runtime_error("solve_sqp: non-finite data in the subproblem at iteration " + std::to_string(iter));
    }
    const QpSolution sub = solve_qp(qp);
    if (sub.status != QpStatus::optimal) {
      status = sub.status == QpStatus::infeasible ? SqpStatus::infeasible_relaxed : SqpStatus::max_iterations;
      break;
    }
    const VectorXd step = scale.cwiseProduct(sub.x) - z;
    const VectorXd lam_lin = sub.ineq_multipliers.head(n_lin);
    const VectorXd lam_col = sub.ineq_multipliers.tail(n_col);

    double max_mult = sub.ineq_multipliers.size() > 0 ? sub.ineq_multipliers.cwiseAbs().maxCoeff() : 0.0;
    if (sub.eq_multipliers.size() > 0) max_mult = std::max(max_mult, sub.eq_multipliers.cwiseAbs().maxCoeff());
    merit_weight = std::max(merit_weight, options.merit_factor * max_mult);

    // l1 merit backtracking; the QP step satisfies every linearization, so
    // the directional derivative is grad f . d - mu * violation.
    const Violation v0 = violation(p, t, z);
    const double phi0 = t.cost(z) + merit_weight * v0.total();
    const double slope = (t.hessian * z + t.gradient).dot(step) - merit_weight * v0.total();
    double alpha = 1.0;
    VectorXd trial = z;
    for (int ls = 0; ls < 40; ++ls) {
      trial = z + alpha * step;
      const double phi = t.cost(trial) + merit_weight * violation(p, t, trial).total();
      if (phi <= phi0 + options.armijo * alpha * std::min(slope, 0.0) + 1e-12 * (1.0 + std::abs(phi0))) break;
      alpha *= options.line_search_contraction;
    }
    z = trial;
    // rounding in the QP can leave slacks a few ulps below their bound
    if (lay.slack)
      for (int k = 0; k < p.horizon; ++k) z[lay.eps(k)] = std::max(z[lay.eps(k)], 0.0);
    if (!z.allFinite()) {
      throw std::runtime_error("solve_sqp: non-finite iterate at iteration " + std::to_string(iter));
    }

    kkt = nlp_kkt_residual(p, t, z, sub.eq_multipliers, lam_lin, lam_col);
    if (options.trace) {
      options.trace({iter, t.cost(z), kkt, n_col > 0 ? max_margin(p, t, z) : -kInf, alpha});
    }
    if (kkt <= options.kkt_tol && max_defect(t, z) <= options.defect_tol) {
      status = SqpStatus::converged;
      break;
    }
  }

  best = unpack(lay, z);
  best.objective = t.cost(z);
  best.kkt_residual = kkt;
  best.max_defect = max_defect(t, z);
  best.iterations = iter;
  best.status = status;
  return best;
}

}  // namespace riskmpc
