#ifndef TSMC_IO_HPP
#define TSMC_IO_HPP

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsmc/estimators.hpp"
#include "tsmc/smc.hpp"
#include "tsmc/twist.hpp"

namespace tsmc {

using Json = nlohmann::ordered_json;

/// Shortest round-trip decimal form; locale-independent.
std::string format_double(double x);

/// Write-temp-then-rename, so readers never observe partial files.
void atomic_write(const std::filesystem::path& path, const std::string& content);

std::string read_file(const std::filesystem::path& path);
std::vector<Json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& records);

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

/// {problem_id, tokens, step_logprobs, answer, phi}
Json trajectory_record(const Problem& problem, const Trajectory& traj);

/// Line-delimited run log: one record per final particle (tokens, answer,
/// final weight, ancestor chain, per-round ESS of its batch) plus a trailing
/// summary record (log Z, rounds executed, flags).
std::vector<Json> run_records(const Problem& problem, const TsmcRunResult& run);

/// Versioned flat parameter file for the learned value model.
void save_value_model(const std::filesystem::path& path, const ValueModel& model,
                      const Json& training_meta);
ValueModel load_value_model(const std::filesystem::path& path);

/// Oracle debug dump: prefix, sigma, V_p, V_mu, prm_gt for every reachable prefix.
void write_oracle_csv(const std::filesystem::path& path,
                      const std::vector<std::shared_ptr<const Oracle>>& oracles);

/// Strict task-spec (de)serialization; unknown keys rejected.
Json task_spec_to_json(const TaskFamilySpec& spec);
TaskFamilySpec task_spec_from_json(const Json& j);

}  // namespace tsmc

#endif
