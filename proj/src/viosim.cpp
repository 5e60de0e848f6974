#include "riskmpc/viosim.hpp"

#include <algorithm>
#include <charconv>
#include <exception>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "riskmpc/perception.hpp"

namespace riskmpc {

using Eigen::Matrix2d;
using Eigen::Vector2d;
using Eigen::Vector3d;

namespace {

bool finite_positive(double v) { return std::isfinite(v) && v > 0.0; }

}  // namespace

void validate(const EkfParams& p) {
  if (!finite_positive(p.process_noise)) throw std::invalid_argument("ekf: process noise must be positive");
  // an infinite measurement noise is allowed: it turns the update off
  if (!(p.measurement_noise > 0.0)) throw std::invalid_argument("ekf: measurement noise must be positive");
  if (!finite_positive(p.sensing_range)) throw std::invalid_argument("ekf: sensing range must be positive");
  if (!(p.field_of_view > 0.0 && p.field_of_view <= 2 * std::numbers::pi))
    throw std::invalid_argument("ekf: field of view must be in (0, 2 pi]");
  if (!(std::isfinite(p.initial_variance) && p.initial_variance >= 0.0))
    throw std::invalid_argument("ekf: initial variance must be non-negative");
}

Covariance2 EkfState::covariance2() const {
  return {covariance(0, 0), covariance(0, 1), covariance(1, 0), covariance(1, 1)};
}

EkfState initial_ekf_state(State2 start, const EkfParams& params) {
  EkfState s;
  s.mean = Vector2d(start.x, start.y);
  s.covariance = params.initial_variance * Matrix2d::Identity();
  return s;
}

std::vector<Landmark> visible_features(const State3& robot, const std::vector<Landmark>& landmarks, double range,
                                       double field_of_view) {
  const double half = field_of_view / 2.0;
  std::vector<std::pair<double, const Landmark*>> hits;
  for (const auto& l : landmarks) {
    const double dx = l.position.x() - robot.x;
    const double dy = l.position.y() - robot.y;
    const double d = std::hypot(dx, dy);
    if (d > range) continue;
    if (d > 0.0 && std::abs(wrap_angle(std::atan2(dy, dx) - robot.psi)) > half) continue;
    hits.emplace_back(d, &l);
  }
  std::stable_sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<Landmark> out;
  out.reserve(hits.size());
  for (const auto& h : hits) out.push_back(*h.second);
  return out;
}

std::vector<RelativeMeasurement> simulate_measurements(State2 truth, const std::vector<Landmark>& visible,
                                                       double measurement_noise, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<RelativeMeasurement> out;
  out.reserve(visible.size());
  for (const auto& l : visible) {
    const Vector2d lm = l.position.head<2>();
    // draw both components even when the noise is infinite, so the stream
    // does not depend on parameters
    const double ex = noise(rng), ey = noise(rng);
    Vector2d value = lm - Vector2d(truth.x, truth.y);
    if (std::isfinite(measurement_noise)) value += measurement_noise * Vector2d(ex, ey);
    out.push_back({lm, value});
  }
  return out;
}

EkfState ekf_predict(const EkfState& s, Control2 u, double dt, const EkfParams& params) {
  EkfState out = s;
  out.mean += dt * Vector2d(u.vx, u.vy);
  const double q = params.process_noise * params.process_noise * dt * dt;
  out.covariance(0, 0) += q;
  out.covariance(1, 1) += q;
  return out;
}

EkfState ekf_update(const EkfState& s, const std::vector<RelativeMeasurement>& measurements,
                    const EkfParams& params) {
  EkfState out = s;
  if (!std::isfinite(params.measurement_noise)) return out;
  const Matrix2d r = params.measurement_noise * params.measurement_noise * Matrix2d::Identity();
  // h(p) = landmark - p, so H = -I
  for (const auto& m : measurements) {
    const Matrix2d& p = out.covariance;
    const Matrix2d innovation_cov = p + r;
    const Matrix2d gain = -p * innovation_cov.inverse();
    const Vector2d innovation = m.value - (m.landmark - out.mean);
    out.mean += gain * innovation;
    const Matrix2d i_kh = Matrix2d::Identity() + gain;
    Matrix2d next = i_kh * p * i_kh.transpose() + gain * r * gain.transpose();
    out.covariance = 0.5 * (next + next.transpose());
  }
  return out;
}

EkfState ekf_step(const EkfState& s, Control2 u, double dt, const std::vector<Landmark>& visible, State2 truth,
                  std::mt19937_64& rng, const EkfParams& params) {
  const EkfState predicted = ekf_predict(s, u, dt, params);
  return ekf_update(predicted, simulate_measurements(truth, visible, params.measurement_noise, rng), params);
}

void validate(const DatasetConfig& cfg) {
  if (cfg.maps < 0 || cfg.episodes_per_map < 0 || cfg.steps < 0)
    throw std::invalid_argument("dataset: counts must be non-negative");
  if (cfg.boxes_per_map < 0 || cfg.scattered_landmarks < 0)
    throw std::invalid_argument("dataset: landmark counts must be non-negative");
  if (!finite_positive(cfg.arena_half_width)) throw std::invalid_argument("dataset: arena size must be positive");
  if (!std::isfinite(cfg.camera_height)) throw std::invalid_argument("dataset: camera height must be finite");
  if (!finite_positive(cfg.body_radius)) throw std::invalid_argument("dataset: body radius must be positive");
  if (!finite_positive(cfg.goal_tolerance)) throw std::invalid_argument("dataset: goal tolerance must be positive");
  if (cfg.goal_patience <= 0) throw std::invalid_argument("dataset: goal patience must be positive");
  if (cfg.tracked_features <= 0) throw std::invalid_argument("dataset: tracked feature count must be positive");
  validate(cfg.ekf);
  validate(cfg.planner);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ a) ^ (b * 0xd6e8feb86659fd93ULL));
}

namespace {

constexpr std::uint64_t kArenaStream = 0x41524e41;  // any fixed tag, keeps map and episode streams apart

std::vector<Vector3d> cube_corners(const Vector3d& center) {
  std::vector<Vector3d> out;
  for (double dx : {-0.5, 0.5})
    for (double dy : {-0.5, 0.5})
      for (double dz : {-0.5, 0.5}) out.push_back(center + Vector3d(dx, dy, dz));
  return out;
}

bool is_free(State2 p, const Arena& arena, double clearance) {
  for (const auto& o : arena.obstacles)
    if (distance(p, {o.cx, o.cy}) < o.radius + clearance) return false;
  return true;
}

State2 random_free_point(std::mt19937_64& rng, const Arena& arena, double half_width, double clearance) {
  std::uniform_real_distribution<double> u(-half_width, half_width);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const State2 p{u(rng), u(rng)};
    if (is_free(p, arena, clearance)) return p;
  }
  throw std::runtime_error("dataset: arena too crowded to place the robot");
}

}  // namespace

Arena random_arena(const DatasetConfig& cfg, int map_index) {
  validate(cfg);
  std::mt19937_64 rng(derive_seed(cfg.seed, kArenaStream, static_cast<std::uint64_t>(map_index)));
  const double inner = std::max(cfg.arena_half_width - 1.0, 0.5);
  std::uniform_real_distribution<double> u(-inner, inner);
  Arena arena;
  int id = 0;
  for (int b = 0; b < cfg.boxes_per_map; ++b) {
    Vector3d center;
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      center = Vector3d(u(rng), u(rng), 0.5);
      placed = std::all_of(arena.obstacles.begin(), arena.obstacles.end(),
                           [&](const Obstacle& o) { return std::hypot(o.cx - center.x(), o.cy - center.y()) > 2.5; });
    }
    if (!placed) throw std::runtime_error("dataset: could not place box " + std::to_string(b));
    const auto corners = cube_corners(center);
    arena.obstacles.push_back(to_obstacle(corners));
    for (const auto& c : corners) arena.landmarks.push_back({c, id++});
  }
  std::uniform_real_distribution<double> spread(-cfg.arena_half_width, cfg.arena_half_width);
  std::uniform_real_distribution<double> height(0.0, 2.0);
  for (int i = 0; i < cfg.scattered_landmarks; ++i) {
    const double x = spread(rng), y = spread(rng);
    arena.landmarks.push_back({Vector3d(x, y, height(rng)), id++});
  }
  return arena;
}

std::vector<Arena> random_arenas(const DatasetConfig& cfg) {
  std::vector<Arena> maps;
  for (int m = 0; m < cfg.maps; ++m) maps.push_back(random_arena(cfg, m));
  return maps;
}

void gen_episode(const DatasetConfig& cfg, const Arena& arena, int map_index, int episode_index, Sequence& out,
                 std::vector<int>& visible_counts) {
  std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(map_index) + 1,
                                  static_cast<std::uint64_t>(episode_index)));
  std::normal_distribution<double> noise(0.0, 1.0);
  const double dt = cfg.planner.dt;
  const double walk = cfg.ekf.process_noise * dt;
  const double place = cfg.arena_half_width - 1.0;
  const double clearance = cfg.body_radius + 0.2;

  State2 truth = random_free_point(rng, arena, place, clearance);
  State2 goal = random_free_point(rng, arena, place, clearance);
  double heading = std::atan2(goal.y - truth.y, goal.x - truth.x);
  EkfState est = initial_ekf_state(truth, cfg.ekf);
  const std::vector<double> r_sigma(static_cast<std::size_t>(cfg.planner.horizon) + 1, cfg.body_radius);
  std::optional<NlpSolution> warm;
  int since_goal = 0;

  out.inputs.resize(18, cfg.steps);
  out.targets.resize(4, cfg.steps);
  visible_counts.assign(static_cast<std::size_t>(cfg.steps), 0);
  std::vector<Vector3d> positions;
  for (int t = 0; t < cfg.steps; ++t) {
    const State2 believed{est.mean.x(), est.mean.y()};
    if (distance(believed, goal) < cfg.goal_tolerance || since_goal >= cfg.goal_patience) {
      goal = random_free_point(rng, arena, place, clearance);
      warm.reset();
      since_goal = 0;
    }
    const auto nearby = filter_range(arena.obstacles, believed, cfg.ekf.sensing_range);
    const NlpSolution plan = plan_step(believed, goal, nearby, r_sigma, cfg.planner, warm, cfg.solver);
    warm = shift_warm_start(plan);
    const Control2 u{plan.controls[0][0], plan.controls[0][1]};

    truth.x += dt * u.vx + walk * noise(rng);
    truth.y += dt * u.vy + walk * noise(rng);
    if (std::hypot(u.vx, u.vy) > 0.05) heading = std::atan2(u.vy, u.vx);

    const State3 pose{truth.x, truth.y, heading};
    const Vector3d camera(truth.x, truth.y, cfg.camera_height);
    auto tracked = visible_features(pose, arena.landmarks, cfg.ekf.sensing_range, cfg.ekf.field_of_view);
    visible_counts[static_cast<std::size_t>(t)] = static_cast<int>(tracked.size());
    std::stable_sort(tracked.begin(), tracked.end(), [&](const Landmark& a, const Landmark& b) {
      return (a.position - camera).squaredNorm() < (b.position - camera).squaredNorm();
    });
    if (tracked.size() > static_cast<std::size_t>(cfg.tracked_features))
      tracked.resize(static_cast<std::size_t>(cfg.tracked_features));
    est = ekf_step(est, u, dt, tracked, truth, rng, cfg.ekf);

    positions.clear();
    for (const auto& l : tracked) positions.push_back(l.position);
    out.inputs.col(t) = make_input(camera, heading, positions, cfg.ekf.sensing_range);
    const Covariance2 c = psd_correct(est.covariance2());
    out.targets.col(t) = Eigen::Vector4d(c.sxx, c.sxy, c.syx, c.syy);
    ++since_goal;
  }
}

namespace {

Dataset empty_dataset(const std::vector<Arena>& maps, const DatasetConfig& cfg) {
  validate(cfg);
  if (maps.empty()) throw std::invalid_argument("dataset: no maps");
  Dataset d;
  d.config = cfg;
  d.config.maps = static_cast<int>(maps.size());
  const std::size_t n = maps.size() * static_cast<std::size_t>(cfg.episodes_per_map);
  d.episodes.resize(n);
  d.visible_counts.resize(n);
  return d;
}

}  // namespace

Dataset gen_dataset_serial(const std::vector<Arena>& maps, const DatasetConfig& cfg) {
  Dataset d = empty_dataset(maps, cfg);
  const int per = cfg.episodes_per_map;
  for (std::size_t i = 0; i < d.episodes.size(); ++i) {
    const int m = static_cast<int>(i) / per, e = static_cast<int>(i) % per;
    gen_episode(cfg, maps[static_cast<std::size_t>(m)], m, e, d.episodes[i], d.visible_counts[i]);
  }
  return d;
}

Dataset gen_dataset(const std::vector<Arena>& maps, const DatasetConfig& cfg) {
  Dataset d = empty_dataset(maps, cfg);
  const int per = cfg.episodes_per_map;
  const int n = static_cast<int>(d.episodes.size());
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic, 1)
  for (int i = 0; i < n; ++i) {
    try {
      const auto k = static_cast<std::size_t>(i);
      gen_episode(cfg, maps[static_cast<std::size_t>(i / per)], i / per, i % per, d.episodes[k], d.visible_counts[k]);
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return d;
}

Dataset gen_dataset(const DatasetConfig& cfg) { return gen_dataset(random_arenas(cfg), cfg); }

namespace {

constexpr const char* kDatasetTag = "# riskmpc-dataset v1";

void put(std::ostream& os, double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  os.write(buf, r.ptr - buf);
}

double parse_double(std::string_view s, const std::string& what) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || s.empty())
    throw std::runtime_error("dataset: bad value for " + what + ": '" + std::string(s) + "'");
  return v;
}

int parse_int(std::string_view s, const std::string& what) {
  int v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || s.empty())
    throw std::runtime_error("dataset: bad value for " + what + ": '" + std::string(s) + "'");
  return v;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

}  // namespace

void write_dataset(std::ostream& os, const Dataset& data) {
  const auto& c = data.config;
  os << kDatasetTag << '\n';
  os << "# input_width=18 output_width=4 maps=" << c.maps << " episodes_per_map=" << c.episodes_per_map
     << " steps=" << c.steps << " seed=" << c.seed << " dt=";
  put(os, c.planner.dt);
  os << " sigma_w=";
  put(os, c.ekf.process_noise);
  os << " sigma_v=";
  put(os, c.ekf.measurement_noise);
  os << " range=";
  put(os, c.ekf.sensing_range);
  os << " fov=";
  put(os, c.ekf.field_of_view);
  os << " p0=";
  put(os, c.ekf.initial_variance);
  os << " camera_height=";
  put(os, c.camera_height);
  os << '\n';
  os << "episode,step";
  for (int i = 0; i < 18; ++i) os << ",in" << i;
  for (const char* t : {"sxx", "sxy", "syx", "syy"}) os << ',' << t;
  os << '\n';
  for (std::size_t e = 0; e < data.episodes.size(); ++e) {
    const auto& s = data.episodes[e];
    for (Eigen::Index t = 0; t < s.inputs.cols(); ++t) {
      os << e << ',' << t;
      for (Eigen::Index i = 0; i < s.inputs.rows(); ++i) {
        os << ',';
        put(os, s.inputs(i, t));
      }
      for (Eigen::Index i = 0; i < s.targets.rows(); ++i) {
        os << ',';
        put(os, s.targets(i, t));
      }
      os << '\n';
    }
  }
}

Dataset read_dataset(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kDatasetTag)
    throw std::runtime_error("dataset: missing or unknown schema tag (expected '" + std::string(kDatasetTag) + "')");
  if (!std::getline(is, line) || line.rfind("# ", 0) != 0)
    throw std::runtime_error("dataset: missing parameter line");
  std::map<std::string, std::string> kv;
  {
    std::istringstream ps(line.substr(2));
    std::string tok;
    while (ps >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) throw std::runtime_error("dataset: malformed header field '" + tok + "'");
      kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
  }
  auto field = [&](const char* key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw std::runtime_error(std::string("dataset: header field '") + key + "' missing");
    return it->second;
  };
  if (parse_int(field("input_width"), "input_width") != 18)
    throw std::runtime_error("dataset: header field 'input_width' must be 18");
  if (parse_int(field("output_width"), "output_width") != 4)
    throw std::runtime_error("dataset: header field 'output_width' must be 4");

  Dataset d;
  auto& c = d.config;
  c.maps = parse_int(field("maps"), "maps");
  c.episodes_per_map = parse_int(field("episodes_per_map"), "episodes_per_map");
  c.steps = parse_int(field("steps"), "steps");
  {
    const auto& s = field("seed");
    const auto r = std::from_chars(s.data(), s.data() + s.size(), c.seed);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw std::runtime_error("dataset: bad value for seed");
  }
  c.planner.dt = parse_double(field("dt"), "dt");
  c.ekf.process_noise = parse_double(field("sigma_w"), "sigma_w");
  c.ekf.measurement_noise = parse_double(field("sigma_v"), "sigma_v");
  c.ekf.sensing_range = parse_double(field("range"), "range");
  c.ekf.field_of_view = parse_double(field("fov"), "fov");
  c.ekf.initial_variance = parse_double(field("p0"), "p0");
  c.camera_height = parse_double(field("camera_height"), "camera_height");
  if (c.maps < 0 || c.episodes_per_map < 0 || c.steps < 0)
    throw std::runtime_error("dataset: header counts must be non-negative");

  if (!std::getline(is, line) || line.rfind("episode,step", 0) != 0)
    throw std::runtime_error("dataset: missing column header");

  const auto episodes = static_cast<std::size_t>(c.maps) * static_cast<std::size_t>(c.episodes_per_map);
  d.episodes.resize(episodes);
  for (auto& s : d.episodes) {
    s.inputs.resize(18, c.steps);
    s.targets.resize(4, c.steps);
  }
  std::size_t expected = 0;
  const std::size_t total = episodes * static_cast<std::size_t>(c.steps);
  int lineno = 3;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto where = "line " + std::to_string(lineno);
    if (expected >= total) throw std::runtime_error("dataset: more rows than the header declares at " + where);
    const auto cells = split(line, ',');
    if (cells.size() != 24) throw std::runtime_error("dataset: expected 24 columns at " + where);
    const std::size_t e = expected / static_cast<std::size_t>(c.steps);
    const int t = static_cast<int>(expected % static_cast<std::size_t>(c.steps));
    if (parse_int(cells[0], "episode at " + where) != static_cast<int>(e) || parse_int(cells[1], "step at " + where) != t)
      throw std::runtime_error("dataset: rows out of order at " + where);
    for (int i = 0; i < 18; ++i) d.episodes[e].inputs(i, t) = parse_double(cells[2 + i], "input at " + where);
    for (int i = 0; i < 4; ++i) d.episodes[e].targets(i, t) = parse_double(cells[20 + i], "target at " + where);
    ++expected;
  }
  if (expected != total)
    throw std::runtime_error("dataset: " + std::to_string(expected) + " rows, header declares " + std::to_string(total));
  return d;
}

}  // namespace riskmpc
