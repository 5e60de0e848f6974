#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "riskmpc/commands.hpp"
#include "riskmpc/textio.hpp"

using namespace riskmpc;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("riskmpc_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct Cli {
  int status = -1;
  std::string out;
  std::string err;
};

Cli cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Cli r;
  r.status = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

std::string first_line(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  return line;
}

// small dataset and network so that the commands run in well under a second
const char* kSmall = R"({
  "dataset": {"maps": 2, "steps": 40},
  "network": {"recurrent_widths": [6], "dense_widths": [5]},
  "training": {"epochs": 3}
})";

std::string message_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("the documented default file matches the built-in defaults") {
  const Config from_file = load_config(fs::path(RISKMPC_SOURCE_DIR) / "config" / "default.jsonc");
  CHECK(dump_config(from_file) == dump_config(default_config()));
  CHECK(from_file.scenario.obstacles.size() == 1);
  CHECK(from_file.scenario.obstacles[0].radius == doctest::Approx(std::sqrt(3.0) / 2.0).epsilon(1e-15));
  CHECK(from_file.scenario.landmarks.size() == 8);
}

TEST_CASE("the resolved dump parses back to itself") {
  Config cfg = parse_config(R"({
    // comments are allowed
    "seed": 42,
    "scenario": {"obstacles": [{"center": [3, 1], "radius": 0.4}], "landmarks": [[1, 2, 0.5], [3, 4, 0.5]],
                 "plant_noise": 0.0, "exact_estimate": true},
    "planner": {"horizon": 8, "velocity_weight": [0.1, 0.2]},
    /* block comment */
    "oracle": {"tracked_features": 3, "measurement_noise": 0.2},
    "network": {"recurrent_widths": [8, 8], "dense_widths": [4]},
    "compare": {"seeds": 3}
  })");
  const std::string text = dump_config(cfg);
  CHECK(text.rfind("// riskmpc-config v1\n", 0) == 0);
  CHECK(dump_config(parse_config(text)) == text);

  CHECK(cfg.scenario.seed == 42);
  CHECK(cfg.dataset.seed == 42);
  CHECK(cfg.training.seed == 42);
  CHECK(cfg.scenario.landmarks.size() == 2);
  CHECK(cfg.scenario.landmarks[1].id == 1);
  CHECK(cfg.scenario.planner.r(1, 1) == 0.2);
  CHECK(cfg.scenario.planner.r(2, 2) == 1e8);
  // filter settings reach both the episodes and the data generator
  CHECK(cfg.dataset.tracked_features == 3);
  CHECK(cfg.dataset.ekf.measurement_noise == 0.2);
  CHECK(cfg.dataset.planner.horizon == 8);
}

TEST_CASE("unknown keys and wrong types are rejected by path") {
  CHECK(message_of(R"({"sed": 1})").find("'sed'") != std::string::npos);
  CHECK(message_of(R"({"scenario": {"bogus": 1}})").find("'scenario.bogus'") != std::string::npos);
  CHECK(message_of(R"({"scenario": {"obstacles": [{"center": [0, 0], "radius": 1, "height": 2}]}})")
            .find("'scenario.obstacles[0].height'") != std::string::npos);
  CHECK(message_of(R"({"planner": {"horizon": 2.5}})").find("'planner.horizon'") != std::string::npos);
  CHECK(message_of(R"({"planner": {"dt": "fast"}})").find("'planner.dt'") != std::string::npos);
  CHECK(message_of(R"({"scenario": {"goal": [1, 2, 3]}})").find("'scenario.goal'") != std::string::npos);
  CHECK(message_of(R"({"seed": -1})").find("'seed'") != std::string::npos);
  CHECK(message_of(R"({"training": []})").find("'training'") != std::string::npos);
  CHECK(message_of(R"({"scenario": {"landmarks": "everywhere"}})").find("'scenario.landmarks'") != std::string::npos);
  CHECK(!message_of(R"({"scenario": {"obstacles": [{"radius": 1}]}})").empty());
  CHECK(!message_of(R"({"scenario": {"obstacles": [{"cube": [0, 0, 0], "center": [0, 0]}]}})").empty());
  CHECK(message_of("{").find("not valid JSON") != std::string::npos);
  // values that parse but make no sense
  CHECK(!message_of(R"({"planner": {"dt": -0.1}})").empty());
  CHECK(!message_of(R"({"compare": {"seeds": 0}})").empty());
  CHECK(!message_of(R"({"network": {"dense_widths": []}})").empty());
  CHECK(message_of("{}").empty());
}

TEST_CASE("a relative perception file is found next to the config") {
  const fs::path dir = scratch("perception");
  fs::copy_file(fs::path(RISKMPC_SOURCE_DIR) / "data" / "perception_example.csv", dir / "frames.csv");
  write(dir / "c.jsonc", R"({"scenario": {"perception_file": "frames.csv"}})");
  const Config cfg = load_config(dir / "c.jsonc");
  REQUIRE(cfg.scenario.perception.has_value());
  CHECK(!cfg.scenario.perception->empty());
  CHECK(fs::equivalent(*cfg.perception_file, dir / "frames.csv"));

  write(dir / "missing.jsonc", R"({"scenario": {"perception_file": "nope.csv"}})");
  CHECK_THROWS_AS(load_config(dir / "missing.jsonc"), ConfigError);
}

TEST_CASE("digest and atomic write") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
  CHECK(hex64(0xabcULL) == "0000000000000abc");

  const fs::path dir = scratch("atomic");
  const fs::path target = dir / "deep" / "er" / "file.txt";
  atomic_write(target, "first");
  atomic_write(target, "second");
  CHECK(read_file(target) == "second");
  int entries = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(target.parent_path())) ++entries;
  CHECK(entries == 1);
}

TEST_CASE("gen-data is reproducible and echoes the configuration") {
  const fs::path dir = scratch("gen");
  write(dir / "small.jsonc", kSmall);
  const std::string config = (dir / "small.jsonc").string();

  const Cli a = cli({"gen-data", "--config", config, "--out", (dir / "a").string()});
  const Cli b = cli({"gen-data", "--config", config, "--out", (dir / "b").string()});
  const Cli c = cli({"gen-data", "--config", config, "--out", (dir / "c").string(), "--seed", "7"});
  REQUIRE(a.status == 0);
  REQUIRE(b.status == 0);
  REQUIRE(c.status == 0);
  CHECK(a.out.find("records 80\n") != std::string::npos);
  CHECK(read_file(dir / "a" / "dataset.csv") == read_file(dir / "b" / "dataset.csv"));
  CHECK(read_file(dir / "a" / "dataset.csv") != read_file(dir / "c" / "dataset.csv"));

  auto digest_line = [](const std::string& out, const std::string& what) {
    const auto at = out.find(what);
    return out.substr(at, out.find('\n', at) - at);
  };
  CHECK(digest_line(a.out, "file digest") == digest_line(b.out, "file digest"));
  CHECK(digest_line(a.out, "parameter digest") == digest_line(b.out, "parameter digest"));
  CHECK(digest_line(a.out, "parameter digest") != digest_line(c.out, "parameter digest"));
  CHECK(digest_line(a.out, "file digest") ==
        "file digest " + hex64(fnv1a64(read_file(dir / "a" / "dataset.csv"))));

  CHECK(first_line(dir / "a" / "dataset.csv") == "# riskmpc-dataset v1");
  CHECK(first_line(dir / "a" / "config.resolved.jsonc") == "// riskmpc-config v1");
  const Config echoed = load_config(dir / "c" / "config.resolved.jsonc");
  CHECK(echoed.seed == 7);
  CHECK(echoed.dataset.maps == 2);
  CHECK(echoed.output_dir == (dir / "c").string());
}

TEST_CASE("gen-data refuses an empty dataset") {
  const fs::path dir = scratch("empty");
  write(dir / "e.jsonc", R"({"dataset": {"episodes_per_map": 0}})");
  const Cli r = cli({"gen-data", "--config", (dir / "e.jsonc").string(), "--out", (dir / "o").string()});
  CHECK(r.status == 2);
  CHECK(r.err.find("empty dataset") != std::string::npos);
  CHECK(!fs::exists(dir / "o" / "dataset.csv"));
}

TEST_CASE("train writes one loss row per epoch and a loadable checkpoint") {
  const fs::path dir = scratch("train");
  write(dir / "one.jsonc", R"({
    "dataset": {"maps": 2, "steps": 40},
    "network": {"recurrent_widths": [6], "dense_widths": [5]},
    "training": {"epochs": 1}
  })");
  const std::string config = (dir / "one.jsonc").string();
  const std::string out = (dir / "o").string();
  REQUIRE(cli({"gen-data", "--config", config, "--out", out}).status == 0);
  const Cli r = cli({"train", "--config", config, "--out", out});
  REQUIRE(r.status == 0);

  std::ifstream loss(dir / "o" / "loss.csv");
  std::string header, columns, row, extra;
  std::getline(loss, header);
  std::getline(loss, columns);
  std::getline(loss, row);
  CHECK(header.rfind("# riskmpc-loss-history v1 initial_train=", 0) == 0);
  CHECK(columns == "train_mse,validation_mse");
  CHECK(std::count(row.begin(), row.end(), ',') == 1);
  CHECK(!std::getline(loss, extra));

  std::ifstream ckpt(dir / "o" / "model.ckpt");
  const CovarianceModel model = load_checkpoint(ckpt);
  CHECK(model.params.spec.recurrent_widths == std::vector<int>{6});

  // the same run again gives the same checkpoint
  REQUIRE(cli({"train", "--config", config, "--out", out, "--model", (dir / "again.ckpt").string()}).status == 0);
  CHECK(read_file(dir / "o" / "model.ckpt") == read_file(dir / "again.ckpt"));
}

TEST_CASE("train names the broken header field") {
  const fs::path dir = scratch("corrupt");
  write(dir / "small.jsonc", kSmall);
  const std::string out = (dir / "o").string();
  REQUIRE(cli({"gen-data", "--config", (dir / "small.jsonc").string(), "--out", out}).status == 0);
  std::string text = read_file(dir / "o" / "dataset.csv");
  const auto at = text.find("sigma_v=");
  REQUIRE(at != std::string::npos);
  text.replace(at, 8, "sigma_q=");
  write(dir / "bad.csv", text);
  const Cli r = cli({"train", "--config", (dir / "small.jsonc").string(), "--out", out, "--dataset",
                     (dir / "bad.csv").string()});
  CHECK(r.status == 2);
  CHECK(r.err.find("sigma_v") != std::string::npos);

  const Cli missing = cli({"train", "--out", out, "--dataset", (dir / "none.csv").string()});
  CHECK(missing.status == 2);
}

TEST_CASE("a diverging training run exits with status 1") {
  const fs::path dir = scratch("diverge");
  write(dir / "d.jsonc", R"({
    "dataset": {"maps": 2, "steps": 40},
    "network": {"recurrent_widths": [6], "dense_widths": [5]},
    "training": {"epochs": 5, "learning_rate": 1e300, "clip_norm": 1e300}
  })");
  const std::string config = (dir / "d.jsonc").string();
  const std::string out = (dir / "o").string();
  REQUIRE(cli({"gen-data", "--config", config, "--out", out}).status == 0);
  const Cli r = cli({"train", "--config", config, "--out", out});
  CHECK(r.status == 1);
  CHECK(r.err.find("epoch") != std::string::npos);
  CHECK(!fs::exists(dir / "o" / "model.ckpt"));
}

TEST_CASE("run reports the outcome through the exit status") {
  const fs::path dir = scratch("run");
  write(dir / "free.jsonc", R"({"scenario": {"obstacles": []}})");
  const Cli free = cli({"run", "--config", (dir / "free.jsonc").string(), "--out", (dir / "free").string()});
  CHECK(free.status == 0);
  CHECK(free.out.find("outcome=reached") != std::string::npos);
  CHECK(first_line(dir / "free" / "episode_baseline.csv") == "# riskmpc-episode-log v1");
  CHECK(first_line(dir / "free" / "summary_baseline.txt") == "# riskmpc-episode-summary v1");

  const Cli naive = cli({"run", "--mode", "naive", "--out", (dir / "naive").string()});
  CHECK(naive.out.find("effective_radius=1.4\n") != std::string::npos);
  CHECK(read_file(dir / "naive" / "summary_naive.txt") == naive.out);

  // too little time to arrive
  write(dir / "short.jsonc", R"({"scenario": {"max_time": 0.5}})");
  CHECK(cli({"run", "--config", (dir / "short.jsonc").string(), "--out", (dir / "short").string()}).status == 1);

  const Cli no_model = cli({"run", "--mode", "risk-averse", "--out", (dir / "ra").string()});
  CHECK(no_model.status == 2);
  CHECK(no_model.err.find("--model") != std::string::npos);
  CHECK(cli({"run", "--mode", "risk-averse", "--out", (dir / "ra").string(), "--model", (dir / "none.ckpt").string()})
            .status == 2);
}

TEST_CASE("episode logs repeat for the same seed") {
  const fs::path dir = scratch("repeat");
  REQUIRE(cli({"run", "--out", (dir / "a").string(), "--seed", "5"}).status != 2);
  REQUIRE(cli({"run", "--out", (dir / "b").string(), "--seed", "5"}).status != 2);
  CHECK(read_file(dir / "a" / "episode_baseline.csv") == read_file(dir / "b" / "episode_baseline.csv"));
}

TEST_CASE("compare with one seed gives one row per mode") {
  const fs::path dir = scratch("compare");
  write(dir / "small.jsonc", kSmall);
  const std::string config = (dir / "small.jsonc").string();
  const std::string out = (dir / "o").string();
  REQUIRE(cli({"gen-data", "--config", config, "--out", out}).status == 0);
  REQUIRE(cli({"train", "--config", config, "--out", out}).status == 0);
  const Cli r = cli({"compare", "--config", config, "--out", out, "--model", out + "/model.ckpt", "--seeds", "1"});
  REQUIRE(r.status == 0);

  std::ifstream table(dir / "o" / "comparison.csv");
  std::vector<std::string> lines;
  for (std::string line; std::getline(table, line);) lines.push_back(line);
  REQUIRE(lines.size() == 5);
  CHECK(lines[0] == "# riskmpc-comparison v1");
  CHECK(lines[2].rfind("baseline,1,", 0) == 0);
  CHECK(lines[3].rfind("naive,1,", 0) == 0);
  CHECK(lines[4].rfind("risk-averse,1,", 0) == 0);
  CHECK(first_line(dir / "o" / "trajectories.csv") == "# riskmpc-trajectories v1");
  CHECK(load_config(dir / "o" / "config.resolved.jsonc").compare_seeds == 1);
}

TEST_CASE("usage errors exit with status 2") {
  CHECK(cli({}).status == 2);
  CHECK(cli({"fly"}).status == 2);
  CHECK(cli({"run", "--mode", "reckless"}).status == 2);
  CHECK(cli({"run", "--seed", "minus"}).status == 2);
  CHECK(cli({"compare", "--out", "x"}).status == 2);
  CHECK(cli({"compare", "--model", "m", "--seeds", "0"}).status == 2);
  CHECK(cli({"gen-data", "--config", "/nonexistent/riskmpc.jsonc"}).status == 2);
  CHECK(cli({"--help"}).status == 0);
}
