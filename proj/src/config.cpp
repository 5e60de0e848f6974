#include "riskmpc/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"
#include "riskmpc/perception.hpp"

namespace riskmpc {

using nlohmann::json;

namespace {

constexpr const char* kSchema = "// riskmpc-config v1";

/// Reads keys out of one JSON object and remembers which it used, so that
/// leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: '" + where() + "' must be an object");
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    return &*it;
  }

  void number(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) fail(key, "a number");
      out = v->get<double>();
    }
  }

  void integer(const std::string& key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) fail(key, "an integer");
      out = v->get<int>();
    }
  }

  void unsigned_integer(const std::string& key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) fail(key, "a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }

  void boolean(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) fail(key, "true or false");
      out = v->get<bool>();
    }
  }

  void text(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail(key, "a string");
      out = v->get<std::string>();
    }
  }

  std::vector<double> numbers(const json& v, const std::string& key, std::size_t n) const {
    if (!v.is_array() || (n != 0 && v.size() != n)) fail(key, n ? "an array of " + std::to_string(n) + " numbers" : "an array of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number()) fail(key, "an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  template <int N>
  void vector(const std::string& key, Eigen::Matrix<double, N, 1>& out) {
    if (const json* v = find(key)) {
      const auto xs = numbers(*v, key, N);
      for (int i = 0; i < N; ++i) out[i] = xs[static_cast<std::size_t>(i)];
    }
  }

  void widths(const std::string& key, std::vector<int>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array() || v->empty()) fail(key, "a non-empty array of integers");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number_integer()) fail(key, "a non-empty array of integers");
        out.push_back(e.get<int>());
      }
    }
  }

  std::optional<Section> child(const std::string& key) {
    if (const json* v = find(key)) return Section(*v, key_path(key));
    return std::nullopt;
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) throw ConfigError("config: unknown key '" + key_path(item.key()) + "'");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& expected) const {
    throw ConfigError("config: '" + key_path(key) + "' must be " + expected);
  }

 private:
  std::string where() const { return path_.empty() ? "(top level)" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::vector<Eigen::Vector3d> cube_corners(const Eigen::Vector3d& center, double size) {
  std::vector<Eigen::Vector3d> out;
  const double h = size / 2.0;
  for (double dx : {-h, h})
    for (double dy : {-h, h})
      for (double dz : {-h, h}) out.push_back(center + Eigen::Vector3d(dx, dy, dz));
  return out;
}

/// Obstacles and, for cubes, the corners that serve as landmarks.
void read_obstacles(Section& sec, Scenario& s, std::vector<Landmark>& corners) {
  const json* list = sec.find("obstacles");
  if (!list) return;
  if (!list->is_array()) sec.fail("obstacles", "an array");
  s.obstacles.clear();
  corners.clear();
  for (std::size_t i = 0; i < list->size(); ++i) {
    Section ob((*list)[i], sec.key_path("obstacles[" + std::to_string(i) + "]"));
    Eigen::Vector3d cube = Eigen::Vector3d::Constant(std::numeric_limits<double>::quiet_NaN());
    Eigen::Vector2d center = cube.head<2>();
    double size = 1.0, radius = -1.0;
    ob.vector<3>("cube", cube);
    ob.number("size", size);
    ob.vector<2>("center", center);
    ob.number("radius", radius);
    ob.finish();
    const bool is_cube = !std::isnan(cube.x());
    const bool is_disc = !std::isnan(center.x());
    if (is_cube == is_disc) ob.fail("cube", "given, or else 'center' and 'radius' (exactly one form)");
    if (is_cube) {
      if (!(size > 0.0)) ob.fail("size", "positive");
      const auto pts = cube_corners(cube, size);
      s.obstacles.push_back(to_obstacle(pts));
      for (const auto& p : pts) corners.push_back({p, static_cast<int>(corners.size())});
    } else {
      if (!(radius >= 0.0)) ob.fail("radius", "a non-negative number");
      s.obstacles.push_back({center.x(), center.y(), radius});
    }
  }
}

void read_scenario(Section& sec, Config& cfg) {
  Scenario& s = cfg.scenario;
  Eigen::Vector3d start(s.start.x, s.start.y, s.start.psi);
  Eigen::Vector2d goal(s.goal.x, s.goal.y);
  sec.vector<3>("start", start);
  sec.vector<2>("goal", goal);
  s.start = {start.x(), start.y(), start.z()};
  s.goal = {goal.x(), goal.y()};

  std::vector<Landmark> corners = s.landmarks;
  read_obstacles(sec, s, corners);
  if (const json* lm = sec.find("landmarks")) {
    if (lm->is_string()) {
      if (lm->get<std::string>() != "obstacle_corners") sec.fail("landmarks", "\"obstacle_corners\" or a list of [x, y, z]");
      s.landmarks = corners;
    } else if (lm->is_array()) {
      s.landmarks.clear();
      for (std::size_t i = 0; i < lm->size(); ++i) {
        const auto xs = sec.numbers((*lm)[i], "landmarks[" + std::to_string(i) + "]", 3);
        s.landmarks.push_back({{xs[0], xs[1], xs[2]}, static_cast<int>(i)});
      }
    } else {
      sec.fail("landmarks", "\"obstacle_corners\" or a list of [x, y, z]");
    }
  } else {
    s.landmarks = corners;
  }

  if (const json* pf = sec.find("perception_file")) {
    if (pf->is_null()) cfg.perception_file.reset();
    else if (pf->is_string()) cfg.perception_file = pf->get<std::string>();
    else sec.fail("perception_file", "a string or null");
  }
  sec.number("body_radius", s.geometry.body_radius);
  sec.number("confidence_scale", s.geometry.confidence_scale);
  sec.number("inflation", s.inflation);
  sec.number("goal_tolerance", s.goal_tolerance);
  sec.number("max_time", s.max_time);
  sec.number("camera_height", s.camera_height);
  sec.number("plant_noise", s.plant_noise);
  sec.number("planning_margin", s.planning_margin);
  sec.boolean("exact_estimate", s.exact_estimate);
  sec.finish();
}

void read_planner(Section& sec, PlannerConfig& p) {
  Eigen::Vector2d q = p.q.diagonal();
  Eigen::Vector2d r = p.r.diagonal().head<2>();
  double slack = p.r(2, 2);
  sec.integer("horizon", p.horizon);
  sec.number("dt", p.dt);
  sec.vector<2>("position_weight", q);
  sec.vector<2>("velocity_weight", r);
  sec.number("slack_weight", slack);
  sec.vector<2>("state_limit", p.state_limit);
  sec.vector<2>("velocity_limit", p.control_limit);
  sec.vector<2>("accel_limit", p.accel_limit);
  sec.finish();
  p.q = q.asDiagonal();
  p.r = Eigen::Vector3d(r.x(), r.y(), slack).asDiagonal();
}

void read_tracker(Section& sec, TrackerConfig& t) {
  Eigen::Vector3d q = t.q.diagonal();
  Eigen::Vector3d r = t.r.diagonal();
  sec.integer("horizon", t.horizon);
  sec.number("dt", t.dt);
  sec.vector<3>("state_weight", q);
  sec.vector<3>("control_weight", r);
  sec.number("vx_limit", t.vx_limit);
  sec.number("vy_limit", t.vy_limit);
  sec.number("yaw_rate_limit", t.yaw_rate_limit);
  sec.vector<3>("accel_limit", t.accel_limit);
  sec.finish();
  t.q = q.asDiagonal();
  t.r = r.asDiagonal();
}

/// Values shared by the episode scenario and the data generator live in
/// the scenario; the generator gets copies.
void share(Config& cfg) {
  auto& d = cfg.dataset;
  const auto& s = cfg.scenario;
  d.planner = s.planner;
  d.solver = s.solver;
  d.ekf = s.ekf;
  d.tracked_features = s.tracked_features;
  d.camera_height = s.camera_height;
  d.body_radius = s.geometry.body_radius;
}

}  // namespace

Config default_config() {
  Config cfg;
  share(cfg);
  resolve_seed(cfg, cfg.seed);
  return cfg;
}

void resolve_seed(Config& cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.dataset.seed = seed;
  cfg.training.seed = seed;
  cfg.scenario.seed = seed;
}

Config parse_config(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end(), nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  Config cfg = default_config();
  Section top(doc, "");
  top.unsigned_integer("seed", cfg.seed);
  top.text("output_dir", cfg.output_dir);
  if (auto s = top.child("scenario")) read_scenario(*s, cfg);
  if (auto s = top.child("planner")) read_planner(*s, cfg.scenario.planner);
  if (auto s = top.child("tracker")) read_tracker(*s, cfg.scenario.tracker);
  if (auto s = top.child("solver")) {
    auto& o = cfg.scenario.solver;
    s->number("kkt_tolerance", o.kkt_tol);
    s->number("defect_tolerance", o.defect_tol);
    s->integer("max_iterations", o.max_iterations);
    s->finish();
  }
  if (auto s = top.child("oracle")) {
    auto& e = cfg.scenario.ekf;
    s->number("process_noise", e.process_noise);
    s->number("measurement_noise", e.measurement_noise);
    s->number("sensing_range", e.sensing_range);
    s->number("field_of_view", e.field_of_view);
    s->number("initial_variance", e.initial_variance);
    s->integer("tracked_features", cfg.scenario.tracked_features);
    s->finish();
  }
  if (auto s = top.child("dataset")) {
    auto& d = cfg.dataset;
    s->integer("maps", d.maps);
    s->integer("episodes_per_map", d.episodes_per_map);
    s->integer("steps", d.steps);
    s->integer("boxes_per_map", d.boxes_per_map);
    s->integer("scattered_landmarks", d.scattered_landmarks);
    s->number("arena_half_width", d.arena_half_width);
    s->number("goal_tolerance", d.goal_tolerance);
    s->integer("goal_patience", d.goal_patience);
    s->finish();
  }
  if (auto s = top.child("network")) {
    s->widths("recurrent_widths", cfg.network.recurrent_widths);
    s->widths("dense_widths", cfg.network.dense_widths);
    s->finish();
  }
  if (auto s = top.child("training")) {
    auto& t = cfg.training;
    s->integer("epochs", t.epochs);
    s->number("learning_rate", t.learning_rate);
    s->number("momentum", t.momentum);
    s->number("clip_norm", t.clip_norm);
    s->integer("batch_size", t.batch_size);
    s->number("validation_fraction", t.validation_fraction);
    s->boolean("parallel", t.parallel);
    s->finish();
  }
  if (auto s = top.child("compare")) {
    s->integer("seeds", cfg.compare_seeds);
    s->finish();
  }
  top.finish();

  share(cfg);
  resolve_seed(cfg, cfg.seed);
  try {
    validate(cfg.scenario);
    validate(cfg.dataset);
    validate(cfg.network);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (cfg.training.epochs < 0) throw ConfigError("config: 'training.epochs' must be >= 0");
  if (cfg.compare_seeds <= 0) throw ConfigError("config: 'compare.seeds' must be positive");
  if (cfg.output_dir.empty()) throw ConfigError("config: 'output_dir' must not be empty");
  return cfg;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  Config cfg = parse_config(buf.str());
  if (cfg.perception_file) {
    std::filesystem::path p(*cfg.perception_file);
    if (p.is_relative()) p = path.parent_path() / p;
    std::ifstream pin(p);
    if (!pin) throw ConfigError("config: cannot read perception file " + p.string());
    try {
      cfg.scenario.perception = read_perception_file(pin);
    } catch (const std::runtime_error& e) {
      throw ConfigError(p.string() + ": " + e.what());
    }
    cfg.perception_file = p.string();
  }
  return cfg;
}

std::string dump_config(const Config& cfg) {
  using ojson = nlohmann::ordered_json;
  const auto& s = cfg.scenario;
  auto vec = [](const auto& v) {
    ojson a = ojson::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
  };
  ojson doc;
  doc["seed"] = cfg.seed;
  doc["output_dir"] = cfg.output_dir;

  ojson sc;
  sc["start"] = {s.start.x, s.start.y, s.start.psi};
  sc["goal"] = {s.goal.x, s.goal.y};
  ojson obstacles = ojson::array();
  for (const auto& o : s.obstacles) obstacles.push_back({{"center", {o.cx, o.cy}}, {"radius", o.radius}});
  sc["obstacles"] = obstacles;
  ojson landmarks = ojson::array();
  for (const auto& l : s.landmarks) landmarks.push_back(vec(l.position));
  sc["landmarks"] = landmarks;
  sc["perception_file"] = cfg.perception_file ? ojson(*cfg.perception_file) : ojson(nullptr);
  sc["body_radius"] = s.geometry.body_radius;
  sc["confidence_scale"] = s.geometry.confidence_scale;
  sc["inflation"] = s.inflation;
  sc["goal_tolerance"] = s.goal_tolerance;
  sc["max_time"] = s.max_time;
  sc["camera_height"] = s.camera_height;
  sc["plant_noise"] = s.plant_noise;
  sc["planning_margin"] = s.planning_margin;
  sc["exact_estimate"] = s.exact_estimate;
  doc["scenario"] = sc;

  const auto& p = s.planner;
  doc["planner"] = {{"horizon", p.horizon},
                    {"dt", p.dt},
                    {"position_weight", vec(p.q.diagonal())},
                    {"velocity_weight", vec(p.r.diagonal().head<2>())},
                    {"slack_weight", p.r(2, 2)},
                    {"state_limit", vec(p.state_limit)},
                    {"velocity_limit", vec(p.control_limit)},
                    {"accel_limit", vec(p.accel_limit)}};
  const auto& t = s.tracker;
  doc["tracker"] = {{"horizon", t.horizon},
                    {"dt", t.dt},
                    {"state_weight", vec(t.q.diagonal())},
                    {"control_weight", vec(t.r.diagonal())},
                    {"vx_limit", t.vx_limit},
                    {"vy_limit", t.vy_limit},
                    {"yaw_rate_limit", t.yaw_rate_limit},
                    {"accel_limit", vec(t.accel_limit)}};
  doc["solver"] = {{"kkt_tolerance", s.solver.kkt_tol},
                   {"defect_tolerance", s.solver.defect_tol},
                   {"max_iterations", s.solver.max_iterations}};
  doc["oracle"] = {{"process_noise", s.ekf.process_noise},
                   {"measurement_noise", s.ekf.measurement_noise},
                   {"sensing_range", s.ekf.sensing_range},
                   {"field_of_view", s.ekf.field_of_view},
                   {"initial_variance", s.ekf.initial_variance},
                   {"tracked_features", s.tracked_features}};
  const auto& d = cfg.dataset;
  doc["dataset"] = {{"maps", d.maps},
                    {"episodes_per_map", d.episodes_per_map},
                    {"steps", d.steps},
                    {"boxes_per_map", d.boxes_per_map},
                    {"scattered_landmarks", d.scattered_landmarks},
                    {"arena_half_width", d.arena_half_width},
                    {"goal_tolerance", d.goal_tolerance},
                    {"goal_patience", d.goal_patience}};
  doc["network"] = {{"recurrent_widths", cfg.network.recurrent_widths}, {"dense_widths", cfg.network.dense_widths}};
  const auto& tr = cfg.training;
  doc["training"] = {{"epochs", tr.epochs},
                     {"learning_rate", tr.learning_rate},
                     {"momentum", tr.momentum},
                     {"clip_norm", tr.clip_norm},
                     {"batch_size", tr.batch_size},
                     {"validation_fraction", tr.validation_fraction},
                     {"parallel", tr.parallel}};
  doc["compare"] = {{"seeds", cfg.compare_seeds}};
  return std::string(kSchema) + "\n" + doc.dump(2) + "\n";
}

}  // namespace riskmpc
