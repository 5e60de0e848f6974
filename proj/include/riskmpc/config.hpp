#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "riskmpc/covpred.hpp"
#include "riskmpc/simcore.hpp"
#include "riskmpc/viosim.hpp"

namespace riskmpc {

/// Bad configuration or command-line usage; the CLI exits with status 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One resolved run configuration.  The seed is copied into the dataset,
/// training and scenario sections by `resolve_seed`.
struct Config {
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  Scenario scenario = default_scenario();
  /// Obstacles for the planner from a perception file instead of the
  /// ground truth; a relative path is taken from the config file's folder.
  std::optional<std::string> perception_file;
  DatasetConfig dataset;
  NetSpec network;
  TrainOptions training;
  int compare_seeds = 20;
};

Config default_config();

/// Parses a JSON document that may contain // and /* */ comments.  Every
/// key is optional; unknown keys and wrongly typed values throw
/// ConfigError naming the key path.
Config parse_config(std::string_view text);

/// Reads and parses a file; loads the perception file when one is named.
Config load_config(const std::filesystem::path& path);

/// Sets the seed of every section.
void resolve_seed(Config& cfg, std::uint64_t seed);

/// The fully resolved configuration in the same format parse_config reads,
/// preceded by a schema comment line.
std::string dump_config(const Config& cfg);

}  // namespace riskmpc
