#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>

#include "tsmc/experiments.hpp"

namespace fs = std::filesystem;

namespace {

tsmc::ExperimentConfig load_config(const std::string& path, std::uint64_t seed_flag,
                                   bool seed_given) {
  if (path.empty()) tsmc::fail(tsmc::ErrorCode::ConfigError, "--config is required");
  tsmc::ExperimentConfig config =
      tsmc::experiment_from_json(tsmc::Json::parse(tsmc::read_file(path)));
  if (seed_given) config.seed = seed_flag;
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Twisted sequential Monte Carlo verification on enumerable synthetic tasks"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  int workers = 1;
  app.add_option("--config", config_path, "experiment config file (JSON)");
  app.add_option("--seed", seed, "override the config seed");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--workers", workers, "worker threads for problem fan-out");

  auto* gen = app.add_subcommand("gen-tasks", "generate a task bundle with oracle tables");
  auto* train = app.add_subcommand("train-value", "train the value model on the task family");
  auto* run = app.add_subcommand("run", "run a verification method over the suite");
  std::string preset;
  run->add_option("--preset", preset, "run a named preset bundle instead of --config");
  auto* report = app.add_subcommand("report", "summarize results into plot-ready CSV");
  std::string results_dir;
  report->add_option("--results", results_dir, "directory holding run outputs")->required();
  auto* verify = app.add_subcommand("verify", "run every identity and estimator check");

  CLI11_PARSE(app, argc, argv);
  const bool seed_given = app.count("--seed") > 0;

  try {
    if (gen->parsed()) {
      tsmc::cmd_gen_tasks(load_config(config_path, seed, seed_given), out_dir);
    } else if (train->parsed()) {
      tsmc::cmd_train_value(load_config(config_path, seed, seed_given), out_dir);
    } else if (run->parsed()) {
      if (!preset.empty()) {
        tsmc::cmd_run_preset(preset, out_dir, workers);
      } else {
        tsmc::cmd_run(load_config(config_path, seed, seed_given), out_dir, workers);
      }
    } else if (report->parsed()) {
      tsmc::cmd_report(results_dir, out_dir);
    } else if (verify->parsed()) {
      const auto checks = tsmc::cmd_verify(out_dir, seed);
      if (!tsmc::all_passed(checks)) return 1;
    }
  } catch (const tsmc::Error& e) {
    std::cerr << e.what() << "\n";
    return e.code() == tsmc::ErrorCode::ConfigError || e.code() == tsmc::ErrorCode::IoError ? 2
                                                                                            : 1;
  } catch (const tsmc::Json::exception& e) {
    std::cerr << "config parse error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
