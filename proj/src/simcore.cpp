#include "riskmpc/simcore.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace riskmpc {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();

void put(std::ostream& os, double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  os.write(buf, r.ptr - buf);
}

std::vector<Eigen::Vector3d> unit_cube_corners(const Eigen::Vector3d& center) {
  std::vector<Eigen::Vector3d> out;
  for (double dx : {-0.5, 0.5})
    for (double dy : {-0.5, 0.5})
      for (double dz : {-0.5, 0.5}) out.push_back(center + Eigen::Vector3d(dx, dy, dz));
  return out;
}

}  // namespace

const char* to_string(Mode mode) {
  switch (mode) {
    case Mode::baseline: return "baseline";
    case Mode::naive: return "naive";
    case Mode::risk_averse: return "risk-averse";
  }
  return "?";
}

Mode parse_mode(const std::string& name) {
  if (name == "baseline") return Mode::baseline;
  if (name == "naive") return Mode::naive;
  if (name == "risk-averse") return Mode::risk_averse;
  throw std::invalid_argument("unknown mode '" + name + "' (expected baseline, naive or risk-averse)");
}

const char* to_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::reached: return "reached";
    case Outcome::collided: return "collided";
    case Outcome::timeout: return "timeout";
    case Outcome::solver_failure: return "solver-failure";
  }
  return "?";
}

Scenario default_scenario() {
  Scenario s;
  const auto corners = unit_cube_corners({4.0, 0.0, 0.5});
  s.obstacles.push_back(to_obstacle(corners));
  for (std::size_t i = 0; i < corners.size(); ++i) s.landmarks.push_back({corners[i], static_cast<int>(i)});
  return s;
}

void validate(const Scenario& s) {
  validate(s.planner);
  validate(s.tracker);
  validate(s.ekf);
  if (!(s.goal_tolerance > 0.0)) throw std::invalid_argument("scenario: goal tolerance must be positive");
  if (!(s.max_time > 0.0)) throw std::invalid_argument("scenario: max time must be positive");
  if (!(s.geometry.body_radius > 0.0)) throw std::invalid_argument("scenario: body radius must be positive");
  if (!(s.geometry.confidence_scale >= 0.0)) throw std::invalid_argument("scenario: confidence scale must be >= 0");
  if (!(s.inflation >= 1.0)) throw std::invalid_argument("scenario: inflation must be at least 1");
  if (!(s.plant_noise >= 0.0) || !std::isfinite(s.plant_noise))
    throw std::invalid_argument("scenario: plant noise must be finite and >= 0");
  if (!(s.planning_margin >= 0.0)) throw std::invalid_argument("scenario: planning margin must be >= 0");
  if (s.tracked_features <= 0) throw std::invalid_argument("scenario: tracked feature count must be positive");
  const double ratio = s.planner.dt / s.tracker.dt;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 || std::round(ratio) < 1)
    throw std::invalid_argument("scenario: planning period must be a whole number of tracking periods");
  for (const auto& o : s.obstacles)
    if (!(o.radius >= 0.0) || !std::isfinite(o.cx) || !std::isfinite(o.cy))
      throw std::invalid_argument("scenario: bad obstacle");
}

State3 plant_step(State3 x, Control3 u, double dt, double sigma_w, std::mt19937_64& rng) {
  if (!(dt > 0.0)) throw std::invalid_argument("plant_step: dt must be positive");
  std::normal_distribution<double> noise(0.0, 1.0);
  // always draw, so the stream does not depend on the noise level
  const double nx = noise(rng), ny = noise(rng);
  State3 out;
  out.x = x.x + dt * u.vx + sigma_w * dt * nx;
  out.y = x.y + dt * u.vy + sigma_w * dt * ny;
  out.psi = wrap_angle(x.psi + dt * u.psi_dot);
  return out;
}

namespace {

double clearance(State2 p, const std::vector<Obstacle>& obstacles, double body_radius) {
  double best = kInf;
  for (const auto& o : obstacles) best = std::min(best, distance(p, {o.cx, o.cy}) - o.radius - body_radius);
  return best;
}

const PerceptionFrame* frame_for_cycle(const std::map<int, PerceptionFrame>& frames, int cycle) {
  if (frames.empty()) return nullptr;
  auto it = frames.upper_bound(cycle);
  if (it == frames.begin()) return &it->second;
  return &std::prev(it)->second;
}

std::vector<Landmark> tracked_landmarks(const Scenario& s, const State3& truth) {
  auto tracked = visible_features(truth, s.landmarks, s.ekf.sensing_range, s.ekf.field_of_view);
  const Eigen::Vector3d camera(truth.x, truth.y, s.camera_height);
  std::stable_sort(tracked.begin(), tracked.end(), [&](const Landmark& a, const Landmark& b) {
    return (a.position - camera).squaredNorm() < (b.position - camera).squaredNorm();
  });
  if (tracked.size() > static_cast<std::size_t>(s.tracked_features))
    tracked.resize(static_cast<std::size_t>(s.tracked_features));
  return tracked;
}

bool usable(const NlpSolution& sol) {
  if (sol.states.empty() || sol.controls.empty()) return false;
  for (const auto& x : sol.states)
    if (!x.allFinite()) return false;
  for (const auto& u : sol.controls)
    if (!u.allFinite()) return false;
  return true;
}

}  // namespace

EpisodeLog run_episode(const Scenario& s, const CovarianceModel* model) {
  validate(s);
  if (s.mode == Mode::risk_averse && model == nullptr)
    throw std::invalid_argument("run_episode: risk-averse mode needs a trained model");

  std::mt19937_64 plant_rng(derive_seed(s.seed, 1));
  std::mt19937_64 sense_rng(derive_seed(s.seed, 2));
  const int per_cycle = static_cast<int>(std::lround(s.planner.dt / s.tracker.dt));
  const int n = s.planner.horizon;
  const double body = s.geometry.body_radius;
  const auto camera = CameraModel::forward_facing(s.camera_height);

  EpisodeLog log;
  log.mode = s.mode;
  log.seed = s.seed;
  State3 truth = s.start;
  truth.psi = wrap_angle(truth.psi);
  EkfState est = initial_ekf_state(truth.position(), s.ekf);
  HiddenState hidden;
  if (model) hidden = zero_hidden(model->params.spec);

  log.steps.push_back({0.0, truth, truth.position(), {}, body, clearance(truth.position(), s.obstacles, body)});
  const long max_steps = std::lround(std::ceil(s.max_time / s.tracker.dt - 1e-9));
  long step = 0;
  std::optional<NlpSolution> warm_plan;
  std::optional<NlpSolution> warm_track;
  Control3 last_command;
  int consecutive_failures = 0;
  bool done = false;

  for (int cycle = 0; !done; ++cycle) {
    log.cycles = cycle + 1;
    const State2 here = s.exact_estimate ? truth.position() : State2{est.mean.x(), est.mean.y()};

    std::vector<Obstacle> seen;
    if (s.perception) {
      if (const PerceptionFrame* frame = frame_for_cycle(*s.perception, cycle))
        seen = detect_obstacles(*frame, camera, BodyPose::planar({here.x, here.y, truth.psi}), s.ekf.sensing_range);
    } else {
      seen = filter_range(s.obstacles, here, s.ekf.sensing_range);
    }
    for (auto& o : seen) o.radius += s.planning_margin;

    std::vector<double> r_sigma(static_cast<std::size_t>(n) + 1, body);
    if (s.mode == Mode::naive) {
      std::fill(r_sigma.begin(), r_sigma.end(), s.inflation * body);
    } else if (s.mode == Mode::risk_averse) {
      std::vector<State2> planned(static_cast<std::size_t>(n) + 1, here);
      if (warm_plan)
        for (int k = 1; k <= n; ++k) planned[k] = {warm_plan->states[k][0], warm_plan->states[k][1]};
      std::vector<Eigen::Vector3d> features;
      for (const auto& l : tracked_landmarks(s, truth)) features.push_back(l.position);
      const auto pred =
          predict_horizon(*model, planned, s.camera_height, truth.psi, features, s.ekf.sensing_range, hidden);
      hidden = pred.after_first_step;
      for (int k = 0; k <= n; ++k) r_sigma[k] = major_axis_radius(pred.covariances[k], s.geometry);
    }
    log.cycle_r_sigma0.push_back(r_sigma[0]);

    std::optional<NlpSolution> plan;
    try {
      const auto t0 = std::chrono::steady_clock::now();
      NlpSolution sol = plan_step(here, s.goal, seen, r_sigma, s.planner, warm_plan, s.solver);
      log.planner_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (!usable(sol)) throw std::runtime_error("non-finite plan");
      plan = std::move(sol);
      consecutive_failures = 0;
    } catch (const std::runtime_error&) {
      ++log.solver_failures;
      if (++consecutive_failures >= 2 || !warm_plan) {
        log.outcome = Outcome::solver_failure;
        break;
      }
      // hold on to the previous plan for one cycle
      plan = *warm_plan;
      plan->states[0] = Eigen::Vector2d(here.x, here.y);
    }
    warm_plan = shift_warm_start(*plan);
    const auto refs = reference_from_plan(*plan, s.planner.dt, s.tracker.dt, truth.psi);

    State2 dead = here;
    Eigen::Vector2d applied = Eigen::Vector2d::Zero();
    for (int j = 0; j < per_cycle; ++j) {
      const State2 now = s.exact_estimate ? truth.position() : dead;
      const std::vector<RefSample> window(refs.begin() + std::min<std::size_t>(j, refs.size() - 1), refs.end());
      Control3 cmd = last_command;
      try {
        const auto tr = track_step({now.x, now.y, truth.psi}, window, s.tracker, warm_track);
        if (tr.solution.controls.empty() || !tr.solution.controls[0].allFinite())
          throw std::runtime_error("non-finite tracking command");
        cmd = tr.command;
        warm_track = shift_warm_start(tr.solution);
      } catch (const std::runtime_error&) {
        ++log.solver_failures;
        warm_track.reset();
      }
      last_command = cmd;
      truth = plant_step(truth, cmd, s.tracker.dt, s.plant_noise, plant_rng);
      dead.x += s.tracker.dt * cmd.vx;
      dead.y += s.tracker.dt * cmd.vy;
      applied += Eigen::Vector2d(cmd.vx, cmd.vy);
      ++step;

      const double c = clearance(truth.position(), s.obstacles, body);
      const State2 shown = s.exact_estimate ? truth.position() : dead;
      log.steps.push_back({static_cast<double>(step) * s.tracker.dt, truth, shown, cmd, r_sigma[0], c});
      if (c < 0.0) {
        log.outcome = Outcome::collided;
        done = true;
      } else if (distance(truth.position(), s.goal) <= s.goal_tolerance) {
        log.outcome = Outcome::reached;
        done = true;
      } else if (step >= max_steps) {
        log.outcome = Outcome::timeout;
        done = true;
      }
      if (done) break;
    }
    if (done) break;

    const Control2 mean_u{applied.x() / per_cycle, applied.y() / per_cycle};
    est = ekf_step(est, mean_u, s.planner.dt, tracked_landmarks(s, truth), truth.position(), sense_rng, s.ekf);
  }
  return log;
}

EpisodeSummary metrics(const EpisodeLog& log) {
  if (log.steps.empty()) throw std::invalid_argument("metrics: empty log");
  EpisodeSummary m;
  m.outcome = log.outcome;
  m.collided = log.outcome == Outcome::collided;
  m.min_clearance = kInf;
  for (std::size_t i = 0; i < log.steps.size(); ++i) {
    if (i > 0) m.path_length += distance(log.steps[i - 1].truth.position(), log.steps[i].truth.position());
    m.min_clearance = std::min(m.min_clearance, log.steps[i].min_clearance);
  }
  m.duration = log.steps.back().t;
  m.time_to_goal = log.outcome == Outcome::reached ? m.duration : kNaN;
  return m;
}

double effective_radius(const EpisodeLog& log, const Scenario& s) {
  switch (log.mode) {
    case Mode::baseline: return s.geometry.body_radius;
    case Mode::naive: return s.inflation * s.geometry.body_radius;
    case Mode::risk_averse: {
      if (log.cycle_r_sigma0.empty()) return kNaN;
      double sum = 0.0;
      for (double r : log.cycle_r_sigma0) sum += r;
      return sum / static_cast<double>(log.cycle_r_sigma0.size());
    }
  }
  return kNaN;
}

void write_episode_log(std::ostream& os, const EpisodeLog& log) {
  os << "# riskmpc-episode-log v1\n";
  os << "t,x_true,y_true,psi,x_est,y_est,vx_cmd,vy_cmd,psidot_cmd,r_sigma0,min_clearance\n";
  for (const auto& r : log.steps) {
    for (double v : {r.t, r.truth.x, r.truth.y, r.truth.psi, r.estimate.x, r.estimate.y, r.command.vx, r.command.vy,
                     r.command.psi_dot, r.r_sigma0}) {
      put(os, v);
      os << ',';
    }
    put(os, r.min_clearance);
    os << '\n';
  }
}

void write_episode_summary(std::ostream& os, const EpisodeLog& log, const Scenario& s) {
  const auto m = metrics(log);
  os << "# riskmpc-episode-summary v1\n";
  os << "mode=" << to_string(log.mode) << '\n';
  os << "seed=" << log.seed << '\n';
  os << "outcome=" << to_string(m.outcome) << '\n';
  os << "collided=" << (m.collided ? "true" : "false") << '\n';
  const std::pair<const char*, double> rows[] = {{"path_length", m.path_length},
                                                 {"time_to_goal", m.time_to_goal},
                                                 {"duration", m.duration},
                                                 {"min_clearance", m.min_clearance},
                                                 {"effective_radius", effective_radius(log, s)}};
  for (const auto& [key, value] : rows) {
    os << key << '=';
    put(os, value);
    os << '\n';
  }
  os << "cycles=" << log.cycles << '\n';
  os << "solver_failures=" << log.solver_failures << '\n';
}

namespace {

constexpr Mode kModes[] = {Mode::baseline, Mode::naive, Mode::risk_averse};

Scenario episode_scenario(const Scenario& base, Mode mode, int index) {
  Scenario s = base;
  s.mode = mode;
  s.seed = base.seed + static_cast<std::uint64_t>(index);
  return s;
}

Comparison summarize(std::vector<std::vector<EpisodeLog>> logs) {
  Comparison c;
  for (auto& per_mode : logs) {
    if (per_mode.empty()) continue;
    ModeStats st;
    st.mode = per_mode.front().mode;
    st.episodes = static_cast<int>(per_mode.size());
    st.min_clearance = kInf;
    double path = 0.0, time = 0.0;
    for (const auto& log : per_mode) {
      const auto m = metrics(log);
      st.collisions += m.collided ? 1 : 0;
      st.min_clearance = std::min(st.min_clearance, m.min_clearance);
      if (m.outcome == Outcome::reached) {
        ++st.reached;
        path += m.path_length;
        time += m.time_to_goal;
      }
    }
    st.collision_rate = static_cast<double>(st.collisions) / st.episodes;
    st.mean_path_length = st.reached > 0 ? path / st.reached : kNaN;
    st.mean_time_to_goal = st.reached > 0 ? time / st.reached : kNaN;
    c.modes.push_back(st);
    c.logs.push_back(std::move(per_mode));
  }
  return c;
}

std::vector<Mode> modes_for(const CovarianceModel* model) {
  std::vector<Mode> out(std::begin(kModes), std::end(kModes));
  if (!model) out.pop_back();
  return out;
}

}  // namespace

Comparison compare_serial(const Scenario& base, const CovarianceModel* model, int seeds) {
  if (seeds <= 0) throw std::invalid_argument("compare: seed count must be positive");
  const auto modes = modes_for(model);
  std::vector<std::vector<EpisodeLog>> logs(modes.size(), std::vector<EpisodeLog>(static_cast<std::size_t>(seeds)));
  for (std::size_t m = 0; m < modes.size(); ++m)
    for (int i = 0; i < seeds; ++i) logs[m][static_cast<std::size_t>(i)] = run_episode(episode_scenario(base, modes[m], i), model);
  return summarize(std::move(logs));
}

Comparison compare(const Scenario& base, const CovarianceModel* model, int seeds) {
  if (seeds <= 0) throw std::invalid_argument("compare: seed count must be positive");
  const auto modes = modes_for(model);
  std::vector<std::vector<EpisodeLog>> logs(modes.size(), std::vector<EpisodeLog>(static_cast<std::size_t>(seeds)));
  const int total = static_cast<int>(modes.size()) * seeds;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(total));
#pragma omp parallel for schedule(dynamic, 1)
  for (int k = 0; k < total; ++k) {
    const auto m = static_cast<std::size_t>(k / seeds);
    const int i = k % seeds;
    try {
      logs[m][static_cast<std::size_t>(i)] = run_episode(episode_scenario(base, modes[m], i), model);
    } catch (...) {
      errors[static_cast<std::size_t>(k)] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return summarize(std::move(logs));
}

void write_comparison_table(std::ostream& os, const Comparison& c) {
  os << "# riskmpc-comparison v1\n";
  os << "mode,episodes,reached,collisions,collision_rate,mean_path_length,mean_time_to_goal,min_clearance\n";
  for (const auto& st : c.modes) {
    os << to_string(st.mode) << ',' << st.episodes << ',' << st.reached << ',' << st.collisions << ',';
    put(os, st.collision_rate);
    os << ',';
    put(os, st.mean_path_length);
    os << ',';
    put(os, st.mean_time_to_goal);
    os << ',';
    put(os, st.min_clearance);
    os << '\n';
  }
}

void write_trajectories(std::ostream& os, const Comparison& c) {
  os << "# riskmpc-trajectories v1\n";
  os << "mode,seed,t,x,y\n";
  for (const auto& per_mode : c.logs) {
    for (const auto& log : per_mode) {
      for (const auto& r : log.steps) {
        os << to_string(log.mode) << ',' << log.seed << ',';
        put(os, r.t);
        os << ',';
        put(os, r.truth.x);
        os << ',';
        put(os, r.truth.y);
        os << '\n';
      }
    }
  }
}

}  // namespace riskmpc
