#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "riskmpc/config.hpp"

namespace riskmpc {

/// A missing, unreadable or malformed input file; exit status 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every command first writes <out>/config.resolved.jsonc.  Results go to
/// `out` (human-readable) and files under cfg.output_dir.  Return value is
/// the exit status; errors are thrown.

/// Writes <out>/dataset.csv.
int cmd_gen_data(const Config& cfg, std::ostream& out);

/// Reads `dataset` (default <out>/dataset.csv), writes the checkpoint to
/// `model` (default <out>/model.ckpt) and <out>/loss.csv.
int cmd_train(const Config& cfg, const std::optional<std::filesystem::path>& dataset,
              const std::optional<std::filesystem::path>& model, std::ostream& out);

/// Writes <out>/episode_<mode>.csv and <out>/summary_<mode>.txt.  Returns 0
/// iff the goal was reached.
int cmd_run(const Config& cfg, Mode mode, const std::optional<std::filesystem::path>& model, std::ostream& out);

/// Writes <out>/comparison.csv and <out>/trajectories.csv.
int cmd_compare(const Config& cfg, const std::filesystem::path& model, std::ostream& out);

/// Parses a command line (without the program name), runs the command and
/// maps exceptions to exit statuses: 2 for usage, configuration and input
/// errors, 1 for everything else.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace riskmpc
