#include "riskmpc/commands.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "riskmpc/textio.hpp"

namespace riskmpc {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

fs::path out_dir(const Config& cfg) { return fs::path(cfg.output_dir); }

void echo_config(const Config& cfg) { atomic_write(out_dir(cfg) / "config.resolved.jsonc", dump_config(cfg)); }

CovarianceModel read_model(const fs::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::runtime_error&) {
    throw InputError("cannot read model " + path.string());
  }
  std::istringstream in(text);
  try {
    return load_checkpoint(in);
  } catch (const std::runtime_error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

}  // namespace

int cmd_gen_data(const Config& cfg, std::ostream& out) {
  echo_config(cfg);
  const auto& d = cfg.dataset;
  if (static_cast<long long>(d.maps) * d.episodes_per_map * d.steps == 0) throw InputError("empty dataset");
  const Dataset data = gen_dataset(d);
  std::ostringstream text;
  write_dataset(text, data);
  const std::string body = text.str();

  // the parameter block is the first two lines of the file
  std::size_t header_end = body.find('\n');
  header_end = body.find('\n', header_end + 1);
  const fs::path path = out_dir(cfg) / "dataset.csv";
  atomic_write(path, body);

  std::size_t records = 0;
  for (const auto& s : data.episodes) records += static_cast<std::size_t>(s.inputs.cols());
  out << "records " << records << "\n";
  out << "parameter digest " << hex64(fnv1a64(std::string_view(body).substr(0, header_end))) << "\n";
  out << "file digest " << hex64(fnv1a64(body)) << "\n";
  out << "wrote " << path.string() << "\n";
  return 0;
}

int cmd_train(const Config& cfg, const std::optional<fs::path>& dataset, const std::optional<fs::path>& model,
              std::ostream& out) {
  echo_config(cfg);
  const fs::path data_path = dataset.value_or(out_dir(cfg) / "dataset.csv");
  const fs::path model_path = model.value_or(out_dir(cfg) / "model.ckpt");
  std::string text;
  try {
    text = read_file(data_path);
  } catch (const std::runtime_error&) {
    throw InputError("cannot read dataset " + data_path.string());
  }
  Dataset data;
  {
    std::istringstream in(text);
    try {
      data = read_dataset(in);
    } catch (const std::runtime_error& e) {
      throw InputError(data_path.string() + ": " + e.what());
    }
  }
  if (data.episodes.empty()) throw InputError("empty dataset");

  const TrainResult result = train(data.episodes, cfg.network, cfg.training);

  std::ostringstream ckpt;
  save_checkpoint(ckpt, result.model);
  atomic_write(model_path, ckpt.str());

  std::ostringstream loss;
  const auto& h = result.history;
  loss << "# riskmpc-loss-history v1 initial_train=" << num(h.front().train_mse)
       << " initial_validation=" << num(h.front().validation_mse) << " best_epoch=" << result.best_epoch << "\n";
  loss << "train_mse,validation_mse\n";
  for (std::size_t e = 1; e < h.size(); ++e) loss << num(h[e].train_mse) << ',' << num(h[e].validation_mse) << '\n';
  atomic_write(out_dir(cfg) / "loss.csv", loss.str());

  const auto& best = h[static_cast<std::size_t>(result.best_epoch)];
  out << "epochs " << h.size() - 1 << "\n";
  out << "train mse " << num(h.front().train_mse) << " -> " << num(h.back().train_mse) << "\n";
  out << "best epoch " << result.best_epoch << " train " << num(best.train_mse) << " validation "
      << num(best.validation_mse) << "\n";
  out << "wrote " << model_path.string() << "\n";
  return 0;
}

int cmd_run(const Config& cfg, Mode mode, const std::optional<fs::path>& model, std::ostream& out) {
  if (mode == Mode::risk_averse && !model) throw ConfigError("risk-averse mode needs --model");
  echo_config(cfg);
  std::optional<CovarianceModel> net;
  if (mode == Mode::risk_averse) net = read_model(*model);

  Scenario s = cfg.scenario;
  s.mode = mode;
  const EpisodeLog log = run_episode(s, net ? &*net : nullptr);

  const std::string name = to_string(mode);
  std::ostringstream log_text, summary;
  write_episode_log(log_text, log);
  write_episode_summary(summary, log, s);
  atomic_write(out_dir(cfg) / ("episode_" + name + ".csv"), log_text.str());
  atomic_write(out_dir(cfg) / ("summary_" + name + ".txt"), summary.str());
  out << summary.str();
  return log.outcome == Outcome::reached ? 0 : 1;
}

int cmd_compare(const Config& cfg, const fs::path& model, std::ostream& out) {
  echo_config(cfg);
  const CovarianceModel net = read_model(model);
  const Comparison c = compare(cfg.scenario, &net, cfg.compare_seeds);
  std::ostringstream table, traj;
  write_comparison_table(table, c);
  write_trajectories(traj, c);
  atomic_write(out_dir(cfg) / "comparison.csv", table.str());
  atomic_write(out_dir(cfg) / "trajectories.csv", traj.str());
  out << table.str();
  return 0;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Risk-averse MPC experiments", "riskmpc"};
  app.require_subcommand(1);

  std::string config_path, out_override, mode_name = "baseline", dataset_path, model_path;
  std::uint64_t seed = 0;
  int seeds = 0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "configuration file (JSON with comments)");
    sub->add_option("--seed", seed, "seed for every random stream");
    sub->add_option("--out", out_override, "output folder");
  };
  auto* gen = app.add_subcommand("gen-data", "simulate filter runs and write a training dataset");
  common(gen);
  auto* tr = app.add_subcommand("train", "fit the covariance network to a dataset");
  common(tr);
  tr->add_option("--dataset", dataset_path, "dataset file (default <out>/dataset.csv)");
  tr->add_option("--model", model_path, "checkpoint to write (default <out>/model.ckpt)");
  auto* run = app.add_subcommand("run", "simulate one episode");
  common(run);
  run->add_option("--mode", mode_name, "baseline, naive or risk-averse")
      ->check(CLI::IsMember({"baseline", "naive", "risk-averse"}));
  run->add_option("--model", model_path, "checkpoint (risk-averse mode)");
  auto* cmp = app.add_subcommand("compare", "run every mode over a range of seeds");
  common(cmp);
  cmp->add_option("--model", model_path, "checkpoint")->required();
  cmp->add_option("--seeds", seeds, "number of seeds")->check(CLI::PositiveNumber);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  const CLI::App* sub = app.get_subcommands().front();
  auto given = [&](const char* name) { return sub->count(name) > 0; };
  try {
    Config cfg = given("--config") ? load_config(config_path) : default_config();
    if (given("--seed")) resolve_seed(cfg, seed);
    if (given("--out")) cfg.output_dir = out_override;
    if (cfg.output_dir.empty()) throw ConfigError("--out must not be empty");

    if (sub == gen) return cmd_gen_data(cfg, out);
    if (sub == tr)
      return cmd_train(cfg, given("--dataset") ? std::optional<fs::path>(dataset_path) : std::nullopt,
                       given("--model") ? std::optional<fs::path>(model_path) : std::nullopt, out);
    if (sub == run)
      return cmd_run(cfg, parse_mode(mode_name), given("--model") ? std::optional<fs::path>(model_path) : std::nullopt,
                     out);
    if (given("--seeds")) cfg.compare_seeds = seeds;
    return cmd_compare(cfg, model_path, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace riskmpc
