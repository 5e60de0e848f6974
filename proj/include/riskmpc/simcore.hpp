#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "riskmpc/covpred.hpp"
#include "riskmpc/geometry.hpp"
#include "riskmpc/mpc.hpp"
#include "riskmpc/perception.hpp"
#include "riskmpc/viosim.hpp"

namespace riskmpc {

enum class Mode { baseline, naive, risk_averse };

const char* to_string(Mode mode);
/// Throws std::invalid_argument for an unknown name.
Mode parse_mode(const std::string& name);

struct Scenario {
  State3 start{0.0, 0.0, 0.0};
  State2 goal{8.0, 0.0};
  /// Ground truth; collisions are judged against these.
  std::vector<Obstacle> obstacles;
  /// When set, the planner sees obstacles detected in these frames (frame
  /// index = planning cycle, the last frame repeats) instead of the ground
  /// truth.
  std::optional<std::map<int, PerceptionFrame>> perception;
  std::vector<Landmark> landmarks;
  PlannerConfig planner;
  TrackerConfig tracker;
  SqpOptions solver;
  RobotGeometry geometry;
  Mode mode = Mode::baseline;
  /// Naive mode plans with inflation * body_radius.
  double inflation = 2.0;
  double goal_tolerance = 0.15;
  double max_time = 30.0;
  double camera_height = 0.5;
  int tracked_features = 5;
  EkfParams ekf;
  /// Plant noise sigma_w (m/s); the filter keeps its own ekf.process_noise.
  double plant_noise = 0.05;
  /// Added to every obstacle radius the planner sees.  Constraints hold at
  /// the waypoints only; the tracked path between them can dip inside.
  double planning_margin = 0.01;
  /// Feed the controllers the true state instead of the filter estimate.
  bool exact_estimate = false;
  std::uint64_t seed = 1;
};

/// The comparison scenario: a unit cube at (4, 0, 0.5) seen through its
/// corners, start (0, 0), goal (8, 0).
Scenario default_scenario();

void validate(const Scenario& s);

/// Euler step of the 3-state model plus Gaussian displacement noise with
/// standard deviation sigma_w * dt on each planar axis.
State3 plant_step(State3 x, Control3 u, double dt, double sigma_w, std::mt19937_64& rng);

enum class Outcome { reached, collided, timeout, solver_failure };

const char* to_string(Outcome outcome);

/// One tracking step.  The command is the one that moved the robot to this
/// state; the first record holds the start and a zero command.
struct StepRecord {
  double t = 0.0;
  State3 truth;
  State2 estimate;
  Control3 command;
  double r_sigma0 = 0.0;
  double min_clearance = 0.0;
};

struct EpisodeLog {
  Mode mode = Mode::baseline;
  std::uint64_t seed = 0;
  std::vector<StepRecord> steps;
  Outcome outcome = Outcome::timeout;
  /// Radius the planner used at X_0, one entry per planning cycle.
  std::vector<double> cycle_r_sigma0;
  int cycles = 0;
  int solver_failures = 0;
  /// Wall time in the planner; not part of any file, since it is not
  /// reproducible.
  double planner_seconds = 0.0;
};

/// Closed loop: every dt_plan perceive, predict r_sigma, plan and build the
/// reference, then track it for dt_plan / dt_track steps against the noisy
/// plant.  Risk-averse mode needs `model`.
EpisodeLog run_episode(const Scenario& s, const CovarianceModel* model = nullptr);

struct EpisodeSummary {
  Outcome outcome = Outcome::timeout;
  bool collided = false;
  double path_length = 0.0;
  /// Final time when the goal was reached, NaN otherwise.
  double time_to_goal = 0.0;
  double duration = 0.0;
  double min_clearance = 0.0;
};

/// Throws std::invalid_argument for an empty log.
EpisodeSummary metrics(const EpisodeLog& log);

/// Radius reported for a mode: body radius, inflation * body radius, or the
/// mean planned r_sigma[0] in risk-averse mode.
double effective_radius(const EpisodeLog& log, const Scenario& s);

void write_episode_log(std::ostream& os, const EpisodeLog& log);
void write_episode_summary(std::ostream& os, const EpisodeLog& log, const Scenario& s);

struct ModeStats {
  Mode mode = Mode::baseline;
  int episodes = 0;
  int collisions = 0;
  int reached = 0;
  double collision_rate = 0.0;
  /// Means over episodes that reached the goal; NaN when none did.
  double mean_path_length = 0.0;
  double mean_time_to_goal = 0.0;
  /// Smallest clearance over all episodes of the mode.
  double min_clearance = 0.0;
};

struct Comparison {
  std::vector<ModeStats> modes;
  /// logs[m][i]: mode m, seed index i.
  std::vector<std::vector<EpisodeLog>> logs;
};

/// Every mode over seeds base.seed + 0 .. seeds-1.  The same seed gives the
/// same noise stream in each mode.  Risk-averse runs are skipped when
/// `model` is null.  The parallel version spreads episodes over threads
/// and matches the serial one bit for bit.
Comparison compare_serial(const Scenario& base, const CovarianceModel* model, int seeds);
Comparison compare(const Scenario& base, const CovarianceModel* model, int seeds);

void write_comparison_table(std::ostream& os, const Comparison& c);
/// mode,seed,t,x,y rows for plotting.
void write_trajectories(std::ostream& os, const Comparison& c);

}  // namespace riskmpc
