#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "riskmpc/geometry.hpp"

namespace riskmpc {

/// Pinhole camera with zero skew and its pose in the robot body frame.
struct CameraModel {
  double fx = 615.0;
  double fy = 615.0;
  double cx = 320.0;
  double cy = 240.0;
  Eigen::Matrix3d r_bc = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t_bc = Eigen::Vector3d::Zero();

  Eigen::Matrix3d intrinsics() const;
  /// Camera looking along body +x (optical z forward, image x right, image y
  /// down) mounted `height` meters above the body origin.
  static CameraModel forward_facing(double height);
};

/// Body-to-spatial rigid transform.
struct BodyPose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static BodyPose planar(const State3& pose);
};

struct FeatureObservation {
  double x_p = 0.0;
  double y_p = 0.0;
  double depth = 0.0;
};

struct BoundingBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;
  std::string label;
};

/// A feature with both its pixel and its spatial position.
struct LocatedFeature {
  double x_p = 0.0;
  double y_p = 0.0;
  Eigen::Vector3d position;
};

/// Throws std::invalid_argument for non-positive focal lengths or a
/// rotation that is not proper orthonormal.
void validate(const CameraModel& cam);
void validate(const BodyPose& pose);

/// Pixel plus depth to spatial coordinates.  Throws for depth <= 0.
Eigen::Vector3d unproject(const FeatureObservation& obs, const CameraModel& cam, const BodyPose& pose);

/// Spatial point to pixel plus depth.  Throws if the point is not in front
/// of the camera.
FeatureObservation project(const Eigen::Vector3d& point, const CameraModel& cam, const BodyPose& pose);

/// One group per box, index-aligned with `boxes`.  A pixel inside several
/// boxes (edges inclusive) goes to the box whose center is nearest; a pixel
/// in no box is dropped.
std::vector<std::vector<Eigen::Vector3d>> assign_features(const std::vector<LocatedFeature>& features,
                                                          const std::vector<BoundingBox>& boxes);

/// Disc with the planar centroid as center and half the largest pairwise 3D
/// distance as radius.  Throws for an empty group.
Obstacle to_obstacle(const std::vector<Eigen::Vector3d>& group);

/// Keeps obstacles whose center is within max_range (inclusive).
std::vector<Obstacle> filter_range(const std::vector<Obstacle>& obstacles, State2 robot, double max_range);

struct PerceptionFrame {
  std::vector<FeatureObservation> features;
  std::vector<BoundingBox> boxes;
};

/// Reads line records `frame_id,x_p,y_p,Z_c` and
/// `frame_id,x_min,y_min,x_max,y_max,label`; '#' starts a comment.  Throws
/// std::runtime_error with the line number on malformed input.
std::map<int, PerceptionFrame> read_perception_file(std::istream& in);

/// Full chain for one frame: unproject, group by box, build discs, drop far
/// ones.  Empty groups are skipped.
std::vector<Obstacle> detect_obstacles(const PerceptionFrame& frame, const CameraModel& cam, const BodyPose& pose,
                                       double max_range);

}  // namespace riskmpc
