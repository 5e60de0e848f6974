#include "riskmpc/perception.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>

namespace riskmpc {

Eigen::Matrix3d CameraModel::intrinsics() const {
  Eigen::Matrix3d k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

CameraModel CameraModel::forward_facing(double height) {
  CameraModel cam;
  cam.r_bc << 0, 0, 1, -1, 0, 0, 0, -1, 0;
  cam.t_bc = {0.0, 0.0, height};
  return cam;
}

BodyPose BodyPose::planar(const State3& pose) {
  BodyPose b;
  b.rotation = Eigen::AngleAxisd(pose.psi, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  b.translation = {pose.x, pose.y, 0.0};
  return b;
}

namespace {

void check_rotation(const Eigen::Matrix3d& r, const char* what) {
  const double orth = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (!(orth <= 1e-9) || !(std::abs(r.determinant() - 1.0) <= 1e-9))
    throw std::invalid_argument(std::string(what) + " is not a proper rotation");
}

}  // namespace

void validate(const CameraModel& cam) {
  if (!(cam.fx > 0.0) || !(cam.fy > 0.0)) throw std::invalid_argument("focal lengths must be positive");
  check_rotation(cam.r_bc, "camera rotation");
}

void validate(const BodyPose& pose) { check_rotation(pose.rotation, "body rotation"); }

Eigen::Vector3d unproject(const FeatureObservation& obs, const CameraModel& cam, const BodyPose& pose) {
  if (!(obs.depth > 0.0)) throw std::invalid_argument("unproject: depth must be positive");
  // K^-1 [x_p, y_p, 1] in closed form for zero skew
  const Eigen::Vector3d ray((obs.x_p - cam.cx) / cam.fx, (obs.y_p - cam.cy) / cam.fy, 1.0);
  const Eigen::Vector3d in_camera = obs.depth * ray;
  const Eigen::Vector3d in_body = cam.r_bc * in_camera + cam.t_bc;
  return pose.rotation * in_body + pose.translation;
}

FeatureObservation project(const Eigen::Vector3d& point, const CameraModel& cam, const BodyPose& pose) {
  const Eigen::Vector3d in_body = pose.rotation.transpose() * (point - pose.translation);
  const Eigen::Vector3d in_camera = cam.r_bc.transpose() * (in_body - cam.t_bc);
  if (!(in_camera.z() > 0.0)) throw std::invalid_argument("project: point is behind the camera");
  return {cam.fx * in_camera.x() / in_camera.z() + cam.cx, cam.fy * in_camera.y() / in_camera.z() + cam.cy,
          in_camera.z()};
}

std::vector<std::vector<Eigen::Vector3d>> assign_features(const std::vector<LocatedFeature>& features,
                                                          const std::vector<BoundingBox>& boxes) {
  std::vector<std::vector<Eigen::Vector3d>> groups(boxes.size());
  for (const auto& f : features) {
    int best = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      const auto& b = boxes[i];
      if (f.x_p < b.x_min || f.x_p > b.x_max || f.y_p < b.y_min || f.y_p > b.y_max) continue;
      const double dx = f.x_p - 0.5 * (b.x_min + b.x_max);
      const double dy = f.y_p - 0.5 * (b.y_min + b.y_max);
      const double d2 = dx * dx + dy * dy;
      // strict comparison: equal distances keep the earlier box
      if (d2 < best_d2) {
        best_d2 = d2;
        best = static_cast<int>(i);
      }
    }
    if (best >= 0) groups[static_cast<std::size_t>(best)].push_back(f.position);
  }
  return groups;
}

Obstacle to_obstacle(const std::vector<Eigen::Vector3d>& group) {
  if (group.empty()) throw std::invalid_argument("to_obstacle: empty group");
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& p : group) mean += p;
  mean /= static_cast<double>(group.size());
  double widest = 0.0;
  for (std::size_t i = 0; i < group.size(); ++i)
    for (std::size_t j = i + 1; j < group.size(); ++j) widest = std::max(widest, (group[i] - group[j]).norm());
  return {mean.x(), mean.y(), 0.5 * widest};
}

std::vector<Obstacle> filter_range(const std::vector<Obstacle>& obstacles, State2 robot, double max_range) {
  if (!(max_range > 0.0)) throw std::invalid_argument("filter_range: max_range must be positive");
  std::vector<Obstacle> kept;
  for (const auto& o : obstacles)
    if (std::hypot(o.cx - robot.x, o.cy - robot.y) <= max_range) kept.push_back(o);
  return kept;
}

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view s, int line_no) {
  T value{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
    throw std::runtime_error("perception file line " + std::to_string(line_no) + ": bad number '" +
                             std::string(s) + "'");
  return value;
}

}  // namespace

std::map<int, PerceptionFrame> read_perception_file(std::istream& in) {
  std::map<int, PerceptionFrame> frames;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    const int frame = parse_number<int>(fields[0], line_no);
    auto fail = [&](const std::string& why) {
      throw std::runtime_error("perception file line " + std::to_string(line_no) + ": " + why);
    };
    if (fields.size() == 4) {
      FeatureObservation f{parse_number<double>(fields[1], line_no), parse_number<double>(fields[2], line_no),
                           parse_number<double>(fields[3], line_no)};
      if (!(f.depth > 0.0)) fail("depth must be positive");
      frames[frame].features.push_back(f);
    } else if (fields.size() == 6) {
      BoundingBox b{parse_number<double>(fields[1], line_no), parse_number<double>(fields[2], line_no),
                    parse_number<double>(fields[3], line_no), parse_number<double>(fields[4], line_no),
                    std::string(fields[5])};
      if (!(b.x_min < b.x_max) || !(b.y_min < b.y_max)) fail("box corners out of order");
      frames[frame].boxes.push_back(std::move(b));
    } else {
      fail("expected 4 or 6 fields, got " + std::to_string(fields.size()));
    }
  }
  return frames;
}

std::vector<Obstacle> detect_obstacles(const PerceptionFrame& frame, const CameraModel& cam, const BodyPose& pose,
                                       double max_range) {
  std::vector<LocatedFeature> located;
  located.reserve(frame.features.size());
  for (const auto& f : frame.features) located.push_back({f.x_p, f.y_p, unproject(f, cam, pose)});
  std::vector<Obstacle> found;
  for (const auto& group : assign_features(located, frame.boxes))
    if (!group.empty()) found.push_back(to_obstacle(group));
  return filter_range(found, {pose.translation.x(), pose.translation.y()}, max_range);
}

}  // namespace riskmpc
