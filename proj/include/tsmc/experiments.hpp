#ifndef TSMC_EXPERIMENTS_HPP
#define TSMC_EXPERIMENTS_HPP

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tsmc/estimators.hpp"
#include "tsmc/io.hpp"
#include "tsmc/propcheck.hpp"

namespace tsmc {

/// Full experiment description; the on-disk schema is documented in
/// docs/config.md. Parsing is strict: unknown keys are rejected everywhere.
struct ExperimentConfig {
  TaskFamilySpec task;
  std::string method = "mv";  // mv | wmv | is | tsmc_mv | tsmc_wmv | tsmc_greedy | sbs
  std::string mode = "oracle";       // twist source: oracle | learned
  std::string twist = "sqrt_value";  // oracle-mode twist: sqrt_value | value |
                                     // step_correctness | mismatched | constant
  Scorer scorer;                     // wmv scoring
  TsmcConfig tsmc;
  int replications = 1;
  std::uint64_t seed = 0;
  double value_noise = 0.0;  // multiplicative log-normal noise on value estimates
  std::string model_file;    // learned-mode parameters
  CtlConfig ctl;
  int train_problems = 20;
  int validation_problems = 4;
};

ExperimentConfig experiment_from_json(const Json& j);
Json experiment_to_json(const ExperimentConfig& config);

/// Outcome of one method on one problem for one replication.
struct MethodOutcome {
  Answer chosen = 0;
  bool solved = false;
  bool zero_fallback = false;
  AnswerTally tally;               // the weights the vote was taken over
  double log_z = 0.0;              // TSMC/IS runs; 0 otherwise
  int rounds_executed = 0;
  std::vector<ScoredAnswer> pool;  // per-sample answer and voting score
  std::vector<Json> records;       // trajectory log records
};

MethodOutcome run_method(const ExperimentConfig& config, const Problem& problem,
                         const std::shared_ptr<const Oracle>& oracle, const ValueModel* model,
                         int replication);

// Command implementations behind the CLI (and the acceptance suite).
void cmd_gen_tasks(const ExperimentConfig& config, const std::filesystem::path& out);
void cmd_train_value(const ExperimentConfig& config, const std::filesystem::path& out);
void cmd_run(const ExperimentConfig& config, const std::filesystem::path& out, int workers);
void cmd_report(const std::filesystem::path& results_dir, const std::filesystem::path& out);
std::vector<CheckResult> cmd_verify(const std::filesystem::path& out, std::uint64_t seed);

/// Canned experiment bundles: name -> {run name -> config}.
std::vector<std::string> preset_names();
Json preset_config(const std::string& name);
/// Runs every entry of a preset into out/<entry>/, training a shared value
/// model first when any entry needs one.
void cmd_run_preset(const std::string& name, const std::filesystem::path& out, int workers);

}  // namespace tsmc

#endif
