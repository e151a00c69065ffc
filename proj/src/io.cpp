#include "tsmc/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace tsmc {

namespace fs = std::filesystem;

std::string format_double(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  if (std::isnan(x)) return "nan";
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  (void)ec;
  return std::string(buf, ptr);
}

void atomic_write(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoError, "cannot open " + tmp.string());
    out << content;
    if (!out) fail(ErrorCode::IoError, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<Json> read_jsonl(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::vector<Json> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    records.push_back(Json::parse(line));
  }
  return records;
}

void write_jsonl(const fs::path& path, const std::vector<Json>& records) {
  std::ostringstream out;
  for (const Json& record : records) out << record.dump() << '\n';
  atomic_write(path, out.str());
}

void write_csv(const fs::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream out;
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << '\n';
  }
  atomic_write(path, out.str());
}

Json trajectory_record(const Problem& problem, const Trajectory& traj) {
  Json j;
  j["problem_id"] = traj.problem_id;
  j["tokens"] = tokens_of(problem, traj.steps);
  j["step_logprobs"] = traj.step_logprobs;
  if (traj.answer) {
    j["answer"] = *traj.answer;
    j["phi"] = correctness(*traj.answer, problem);
  } else {
    j["answer"] = nullptr;
    j["phi"] = nullptr;
  }
  return j;
}

std::vector<Json> run_records(const Problem& problem, const TsmcRunResult& run) {
  std::vector<Json> records;
  const int n = static_cast<int>(run.finals.size());
  records.reserve(static_cast<std::size_t>(n) + 1);

  for (int i = 0; i < n; ++i) {
    const Trajectory& traj = run.finals[static_cast<std::size_t>(i)];
    Json j = trajectory_record(problem, traj);
    j["particle"] = i;
    j["final_weight"] = std::exp(run.final_log_weight[i]);
    std::vector<int> chain;
    int slot = i;
    for (auto it = run.rounds.rbegin(); it != run.rounds.rend(); ++it) {
      slot = it->ancestors[static_cast<std::size_t>(slot)];
      chain.push_back(slot);
    }
    std::reverse(chain.begin(), chain.end());
    j["ancestors"] = chain;
    const int batch = run.minibatch > 0 ? i / run.minibatch : 0;
    std::vector<double> ess;
    ess.reserve(run.rounds.size());
    for (const auto& round : run.rounds) ess.push_back(round.ess_per_batch[batch]);
    j["round_ess"] = ess;
    records.push_back(std::move(j));
  }

  Json summary;
  summary["summary"] = true;
  summary["log_z"] = run.log_z;
  summary["rounds_executed"] = run.rounds_executed;
  std::vector<int> flagged;
  for (std::size_t b = 0; b < run.batch_flagged.size(); ++b) {
    if (run.batch_flagged[b]) flagged.push_back(static_cast<int>(b));
  }
  summary["flagged_batches"] = flagged;
  records.push_back(std::move(summary));
  return records;
}

namespace {
constexpr int kModelVersion = 1;
}

void save_value_model(const fs::path& path, const ValueModel& model, const Json& training_meta) {
  Json j;
  j["version"] = kModelVersion;
  j["horizon"] = model.horizon();
  j["state_count"] = model.state_count();
  j["training"] = training_meta;
  std::vector<double> theta(model.params().data(), model.params().data() + model.params().size());
  j["theta"] = theta;
  atomic_write(path, j.dump(2) + "\n");
}

ValueModel load_value_model(const fs::path& path) {
  const Json j = Json::parse(read_file(path));
  if (!j.contains("version") || j["version"].get<int>() != kModelVersion) {
    fail(ErrorCode::ConfigError, "unsupported model version in " + path.string());
  }
  ValueModel model(j["horizon"].get<int>(), j["state_count"].get<int>());
  const auto theta = j["theta"].get<std::vector<double>>();
  if (static_cast<Eigen::Index>(theta.size()) != model.params().size()) {
    fail(ErrorCode::ConfigError, "parameter count mismatch in " + path.string());
  }
  for (std::size_t i = 0; i < theta.size(); ++i) {
    model.params()[static_cast<Eigen::Index>(i)] = theta[i];
  }
  return model;
}

void write_oracle_csv(const fs::path& path,
                      const std::vector<std::shared_ptr<const Oracle>>& oracles) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& oracle : oracles) {
    const PrefixTree& tree = oracle->tree();
    for (std::int64_t node = 0; node < tree.node_count(); ++node) {
      if (node != 0 && oracle->prefix_prob(node) == 0.0) continue;  // unreachable
      const auto steps = tree.steps_of(node);
      std::string prefix;
      for (std::size_t i = 0; i < steps.size(); ++i) {
        if (i) prefix += '-';
        prefix += std::to_string(steps[i]);
      }
      rows.push_back({oracle->problem().id, prefix, format_double(oracle->sigma(node)),
                      format_double(oracle->value(node, Policy::p)),
                      format_double(oracle->value(node, Policy::mu)),
                      std::to_string(oracle->prm(node))});
    }
  }
  write_csv(path, {"problem_id", "prefix", "sigma", "V_p", "V_mu", "prm_gt"}, rows);
}

Json task_spec_to_json(const TaskFamilySpec& spec) {
  Json j;
  j["family"] = spec.family;
  j["alphabet"] = spec.alphabet;
  j["horizon"] = spec.horizon;
  j["modulus"] = spec.modulus;
  j["rule"] = spec.rule;
  j["groups"] = spec.groups;
  j["skew"] = spec.skew;
  j["skew_direction"] = spec.skew_direction;
  j["skew_profile"] = spec.skew_profile;
  j["rollout_skew_shift"] = spec.rollout_skew_shift;
  j["fixed_correct_answer"] = spec.fixed_correct_answer;
  j["step_arity"] = spec.step_arity;
  j["end_marker"] = spec.end_marker;
  j["end_prob"] = spec.end_prob;
  j["seed"] = spec.seed;
  j["problem_count"] = spec.problem_count;
  j["enumeration_budget"] = spec.enumeration_budget;
  return j;
}

TaskFamilySpec task_spec_from_json(const Json& j) {
  static const std::vector<std::string> known = {
      "family", "alphabet", "horizon", "modulus", "rule", "groups", "skew",
      "skew_direction", "skew_profile", "rollout_skew_shift", "fixed_correct_answer", "step_arity",
      "end_marker", "end_prob", "seed", "problem_count", "enumeration_budget"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      fail(ErrorCode::ConfigError, "unknown task key '" + it.key() + "'");
    }
  }
  TaskFamilySpec spec;
  if (j.contains("family")) spec.family = j["family"].get<std::string>();
  if (j.contains("alphabet")) spec.alphabet = j["alphabet"].get<int>();
  if (j.contains("horizon")) spec.horizon = j["horizon"].get<int>();
  if (j.contains("modulus")) spec.modulus = j["modulus"].get<int>();
  if (j.contains("rule")) spec.rule = j["rule"].get<std::string>();
  if (j.contains("groups")) spec.groups = j["groups"].get<std::vector<int>>();
  if (j.contains("skew")) spec.skew = j["skew"].get<double>();
  if (j.contains("skew_direction")) spec.skew_direction = j["skew_direction"].get<std::string>();
  if (j.contains("skew_profile")) spec.skew_profile = j["skew_profile"].get<std::vector<double>>();
  if (j.contains("rollout_skew_shift")) {
    spec.rollout_skew_shift = j["rollout_skew_shift"].get<double>();
  }
  if (j.contains("fixed_correct_answer")) {
    spec.fixed_correct_answer = j["fixed_correct_answer"].get<int>();
  }
  if (j.contains("step_arity")) spec.step_arity = j["step_arity"].get<int>();
  if (j.contains("end_marker")) spec.end_marker = j["end_marker"].get<bool>();
  if (j.contains("end_prob")) spec.end_prob = j["end_prob"].get<double>();
  if (j.contains("seed")) spec.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("problem_count")) spec.problem_count = j["problem_count"].get<int>();
  if (j.contains("enumeration_budget")) {
    spec.enumeration_budget = j["enumeration_budget"].get<std::int64_t>();
  }
  return spec;
}

}  // namespace tsmc
