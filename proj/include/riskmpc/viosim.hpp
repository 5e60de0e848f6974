#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "riskmpc/covpred.hpp"
#include "riskmpc/geometry.hpp"
#include "riskmpc/mpc.hpp"

namespace riskmpc {

struct Landmark {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  int id = 0;
};

struct EkfParams {
  double process_noise = 0.05;      // sigma_w, m/s
  double measurement_noise = 0.1;   // sigma_v, m
  double sensing_range = 5.0;       // m
  double field_of_view = std::numbers::pi;  // full angle, centered on the heading
  double initial_variance = 1e-4;   // P_0 = initial_variance * I, m^2
};

void validate(const EkfParams& params);

struct EkfState {
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  Eigen::Matrix2d covariance = Eigen::Matrix2d::Zero();

  Covariance2 covariance2() const;
};

EkfState initial_ekf_state(State2 start, const EkfParams& params);

/// Landmarks within planar range (inclusive) and within the field of view
/// around the heading (inclusive), nearest first; ties keep input order.
std::vector<Landmark> visible_features(const State3& robot, const std::vector<Landmark>& landmarks, double range,
                                       double field_of_view);

/// A noisy observation of landmark minus robot position in the plane.
struct RelativeMeasurement {
  Eigen::Vector2d landmark;
  Eigen::Vector2d value;
};

std::vector<RelativeMeasurement> simulate_measurements(State2 truth, const std::vector<Landmark>& visible,
                                                       double measurement_noise, std::mt19937_64& rng);

/// mean += u dt, P += sigma_w^2 dt^2 I.
EkfState ekf_predict(const EkfState& s, Control2 u, double dt, const EkfParams& params);

/// Sequential Kalman updates, one per measurement, in Joseph form.
EkfState ekf_update(const EkfState& s, const std::vector<RelativeMeasurement>& measurements,
                    const EkfParams& params);

/// Predict, then observe every visible landmark from the true position.
EkfState ekf_step(const EkfState& s, Control2 u, double dt, const std::vector<Landmark>& visible, State2 truth,
                  std::mt19937_64& rng, const EkfParams& params);

struct Arena {
  std::vector<Landmark> landmarks;
  std::vector<Obstacle> obstacles;
};

struct DatasetConfig {
  int maps = 4;
  int episodes_per_map = 1;
  int steps = 400;
  int boxes_per_map = 3;
  int scattered_landmarks = 12;
  double arena_half_width = 6.0;
  double camera_height = 0.5;
  double body_radius = 0.7;
  double goal_tolerance = 0.15;
  /// A goal not reached within this many steps is replaced.
  int goal_patience = 150;
  /// The estimator fuses at most this many visible landmarks, nearest to
  /// the camera first: the same ones the network input is built from.
  int tracked_features = 5;
  EkfParams ekf;
  PlannerConfig planner;
  SqpOptions solver;
  std::uint64_t seed = 1;
};

void validate(const DatasetConfig& cfg);

/// Unit cubes (their corners are landmarks) plus scattered landmarks.
Arena random_arena(const DatasetConfig& cfg, int map_index);
std::vector<Arena> random_arenas(const DatasetConfig& cfg);

struct Dataset {
  DatasetConfig config;
  std::vector<Sequence> episodes;
  /// Visible landmark count per record, parallel to episodes.
  std::vector<std::vector<int>> visible_counts;
};

/// Every (map, episode) pair gets its own seeded generator, so the two
/// versions produce bit-identical data; the parallel one spreads episodes
/// over threads.  cfg.maps is ignored in favor of `maps`.
Dataset gen_dataset_serial(const std::vector<Arena>& maps, const DatasetConfig& cfg);
Dataset gen_dataset(const std::vector<Arena>& maps, const DatasetConfig& cfg);
/// Random arenas from cfg, then gen_dataset.
Dataset gen_dataset(const DatasetConfig& cfg);

/// One episode, exposed for tests and the benchmark.
void gen_episode(const DatasetConfig& cfg, const Arena& arena, int map_index, int episode_index, Sequence& out,
                 std::vector<int>& visible_counts);

/// Versioned header followed by `episode,step,<18 inputs>,<4 targets>` rows.
void write_dataset(std::ostream& os, const Dataset& data);
/// Throws std::runtime_error on a bad header or malformed row.
Dataset read_dataset(std::istream& is);

/// 64-bit seed for a sub-stream, derived with a splitmix step.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace riskmpc
