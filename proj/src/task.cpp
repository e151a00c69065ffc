#include "tsmc/task.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tsmc {

PositionalGenerator::PositionalGenerator(Eigen::MatrixXd probs) : probs_(std::move(probs)) {
  for (Eigen::Index t = 0; t < probs_.rows(); ++t) {
    const double total = probs_.row(t).sum();
    if (std::abs(total - 1.0) > 1e-12 || probs_.row(t).minCoeff() < 0.0) {
      fail(ErrorCode::ConfigError, "step distribution at position " + std::to_string(t) +
                                       " is not a probability vector");
    }
  }
}

Eigen::VectorXd PositionalGenerator::step_probs(std::span<const int> prefix) const {
  const auto t = static_cast<Eigen::Index>(prefix.size());
  if (t >= probs_.rows()) {
    fail(ErrorCode::TerminalPrefix, "prefix already has " + std::to_string(t) + " steps");
  }
  return probs_.row(t).transpose();
}

namespace {

int digit_sum(int value, int base, int arity) {
  int s = 0;
  for (int i = 0; i < arity; ++i) {
    s += value % base;
    value /= base;
  }
  return s;
}

int parity_of(int value, int base, int arity) { return digit_sum(value, base, arity) & 1; }

/// answer = (sum of all token digits) mod R; state = residue still needed.
class DigitSumRule final : public AnswerRule {
 public:
  DigitSumRule(int modulus, int base, int arity, Answer correct)
      : modulus_(modulus), base_(base), arity_(arity), correct_(correct) {}

  int answer_count() const override { return modulus_; }

  Answer answer(std::span<const int> steps) const override {
    int s = 0;
    for (int v : steps) s += digit_sum(v, base_, arity_);
    return s % modulus_;
  }

  int state(std::span<const int> steps) const override {
    const int deficit = (correct_ - answer(steps)) % modulus_;
    return deficit < 0 ? deficit + modulus_ : deficit;
  }

  int state_count() const override { return modulus_; }

 private:
  int modulus_;
  int base_;
  int arity_;
  Answer correct_;
};

/// answer = parity of all token bits; state = parity still needed.
class XorRule final : public AnswerRule {
 public:
  XorRule(int base, int arity, Answer correct) : base_(base), arity_(arity), correct_(correct) {}

  int answer_count() const override { return 2; }

  Answer answer(std::span<const int> steps) const override {
    int r = 0;
    for (int v : steps) r ^= parity_of(v, base_, arity_);
    return r;
  }

  int state(std::span<const int> steps) const override { return answer(steps) ^ correct_; }
  int state_count() const override { return 2; }

 private:
  int base_;
  int arity_;
  Answer correct_;
};

/// answer = 1 iff every parity group hits its target. A group with the wrong
/// parity pins the answer to 0 at that group's boundary, so branches die at
/// depths set by the group layout. States: 0 dead, 1 every group closed and
/// matched, 2 alive needing parity 0 to close the current group, 3 needing 1.
class AndXorRule final : public AnswerRule {
 public:
  AndXorRule(std::vector<int> groups, std::vector<int> targets, int base, int arity)
      : groups_(std::move(groups)), targets_(std::move(targets)), base_(base), arity_(arity) {}

  int answer_count() const override { return 2; }

  // Early-terminated sequences leave the last group open; the formula is then
  // unsatisfied and the answer is 0.
  Answer answer(std::span<const int> steps) const override { return state(steps) == 1 ? 1 : 0; }

  int state(std::span<const int> steps) const override {
    int pos = 0;
    std::size_t j = 0;
    int parity = 0;
    for (int v : steps) {
      parity ^= parity_of(v, base_, arity_);
      ++pos;
      if (j < groups_.size() && pos == group_end(j)) {
        if (parity != targets_[j]) return 0;  // dead from here on
        parity = 0;
        ++j;
      }
    }
    if (j >= groups_.size()) return 1;
    return 2 + (targets_[j] ^ parity);
  }

  int state_count() const override { return 4; }

 private:
  int group_end(std::size_t j) const {
    return std::accumulate(groups_.begin(), groups_.begin() + static_cast<long>(j) + 1, 0);
  }

  std::vector<int> groups_;
  std::vector<int> targets_;
  int base_;
  int arity_;
};

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  Eigen::ArrayXd z = (logits.array() - logits.maxCoeff()).exp();
  return (z / z.sum()).matrix();
}

int ipow(int base, int exp) {
  int r = 1;
  for (int i = 0; i < exp; ++i) r *= base;
  return r;
}

std::shared_ptr<const Generator> make_generator(const TaskFamilySpec& spec, int index,
                                                double skew_scale) {
  const int base_alphabet = ipow(spec.alphabet, spec.step_arity);
  const int alphabet = base_alphabet + (spec.end_marker ? 1 : 0);
  Eigen::MatrixXd probs(spec.horizon, alphabet);

  if (!spec.skew_profile.empty() &&
      spec.skew_profile.size() != static_cast<std::size_t>(spec.horizon)) {
    fail(ErrorCode::ConfigError, "skew_profile must list one skew per position");
  }
  RandomStream skew_rng = RandomStream(spec.seed)
                              .derive("skew")
                              .derive(static_cast<std::uint64_t>(index));
  for (int t = 0; t < spec.horizon; ++t) {
    double s;
    if (!spec.skew_profile.empty()) {
      s = spec.skew_profile[static_cast<std::size_t>(t)] + (skew_scale - spec.skew);
    } else if (spec.skew_direction == "down") {
      s = -skew_scale;
    } else if (spec.skew_direction == "up") {
      s = skew_scale;
    } else if (spec.skew_direction == "random") {
      s = skew_scale * (2.0 * skew_rng.next_double() - 1.0);
    } else {
      fail(ErrorCode::ConfigError, "unknown skew_direction '" + spec.skew_direction + "'");
    }
    Eigen::VectorXd logits(base_alphabet);
    for (int k = 0; k < base_alphabet; ++k) logits[k] = s * k;
    Eigen::VectorXd row = softmax(logits);
    if (spec.end_marker) {
      probs.row(t).head(base_alphabet) = row.transpose() * (1.0 - spec.end_prob);
      probs(t, base_alphabet) = spec.end_prob;
    } else {
      probs.row(t) = row.transpose();
    }
  }
  return std::make_shared<PositionalGenerator>(std::move(probs));
}

std::span<const int> content_steps(const Problem& problem, std::span<const int> steps) {
  if (problem.has_end_marker() && !steps.empty() && steps.back() == problem.end_step) {
    return steps.first(steps.size() - 1);
  }
  return steps;
}

}  // namespace

std::shared_ptr<const AnswerRule> make_digit_sum_rule(int modulus, int base, int arity,
                                                      Answer correct) {
  return std::make_shared<DigitSumRule>(modulus, base, arity, correct);
}

std::shared_ptr<const AnswerRule> make_xor_rule(int base, int arity, Answer correct) {
  return std::make_shared<XorRule>(base, arity, correct);
}

std::shared_ptr<const AnswerRule> make_and_xor_rule(std::vector<int> groups,
                                                    std::vector<int> targets, int base, int arity) {
  return std::make_shared<AndXorRule>(std::move(groups), std::move(targets), base, arity);
}

Problem make_problem(const TaskFamilySpec& spec, int index) {
  if (spec.alphabet < 2) fail(ErrorCode::ConfigError, "alphabet must be at least 2");
  if (spec.horizon < 1) fail(ErrorCode::ConfigError, "horizon must be at least 1");
  if (spec.step_arity < 1) fail(ErrorCode::ConfigError, "step_arity must be at least 1");

  const double total_steps = std::pow(static_cast<double>(spec.alphabet),
                                      static_cast<double>(spec.horizon * spec.step_arity));
  if (total_steps > static_cast<double>(spec.enumeration_budget)) {
    fail(ErrorCode::BudgetExceeded,
         "K^(T*arity) = " + std::to_string(total_steps) + " exceeds budget " +
             std::to_string(spec.enumeration_budget));
  }

  RandomStream rng = RandomStream(spec.seed).derive("problem").derive(static_cast<std::uint64_t>(index));

  Problem problem;
  problem.id = spec.family + "-" + std::to_string(spec.seed) + "-" + std::to_string(index);
  problem.horizon = spec.horizon;
  problem.step_arity = spec.step_arity;
  problem.token_alphabet = spec.alphabet;

  const int base_alphabet = ipow(spec.alphabet, spec.step_arity);
  if (spec.end_marker) problem.end_step = base_alphabet;

  auto pick_answer = [&](int count) {
    if (spec.fixed_correct_answer >= 0) {
      if (spec.fixed_correct_answer >= count) {
        fail(ErrorCode::ConfigError, "fixed_correct_answer outside the answer set");
      }
      return spec.fixed_correct_answer;
    }
    return static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(count));
  };

  if (spec.family == "digit-sum") {
    if (spec.modulus < 2) fail(ErrorCode::ConfigError, "digit-sum needs modulus >= 2");
    problem.correct_answer = pick_answer(spec.modulus);
    problem.rule = std::make_shared<DigitSumRule>(spec.modulus, spec.alphabet, spec.step_arity,
                                                  problem.correct_answer);
  } else if (spec.family == "branch-logic") {
    if (spec.rule == "xor") {
      problem.correct_answer = pick_answer(2);
      problem.rule = std::make_shared<XorRule>(spec.alphabet, spec.step_arity, problem.correct_answer);
    } else if (spec.rule == "and") {
      std::vector<int> groups = spec.groups;
      if (groups.empty()) {
        groups = {spec.horizon / 2, spec.horizon - spec.horizon / 2};
        std::erase(groups, 0);
      }
      if (std::accumulate(groups.begin(), groups.end(), 0) != spec.horizon) {
        fail(ErrorCode::ConfigError, "branch-logic groups must sum to horizon");
      }
      std::vector<int> targets(groups.size());
      for (auto& g : targets) g = static_cast<int>(rng.next_u64() & 1u);
      problem.correct_answer = 1;
      problem.rule = std::make_shared<AndXorRule>(std::move(groups), std::move(targets),
                                                  spec.alphabet, spec.step_arity);
    } else {
      fail(ErrorCode::ConfigError, "unknown branch-logic rule '" + spec.rule + "'");
    }
  } else {
    fail(ErrorCode::ConfigError, "unknown task family '" + spec.family + "'");
  }

  problem.generator = make_generator(spec, index, spec.skew);
  if (spec.rollout_skew_shift != 0.0) {
    problem.rollout = make_generator(spec, index, spec.skew + spec.rollout_skew_shift);
  } else {
    problem.rollout = problem.generator;
  }
  return problem;
}

std::vector<Problem> make_suite(const TaskFamilySpec& spec) {
  std::vector<Problem> suite;
  suite.reserve(static_cast<std::size_t>(spec.problem_count));
  for (int i = 0; i < spec.problem_count; ++i) suite.push_back(make_problem(spec, i));
  return suite;
}

Answer extract_answer(const Problem& problem, const Trajectory& traj) {
  if (!traj.terminal) fail(ErrorCode::NotTerminal, "trajectory for " + traj.problem_id);
  return answer_of(problem, traj.steps);
}

double step_logprob(const Generator& gen, std::span<const int> prefix, int step) {
  if (step < 0 || step >= gen.step_alphabet()) {
    fail(ErrorCode::InvalidStep, "step " + std::to_string(step));
  }
  const double p = gen.step_probs(prefix)[step];
  return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
}

std::pair<int, double> sample_step(const Generator& gen, const Trajectory& prefix,
                                   RandomStream& rng) {
  if (prefix.terminal) fail(ErrorCode::TerminalPrefix, "trajectory for " + prefix.problem_id);
  const Eigen::VectorXd probs = gen.step_probs(prefix.steps);
  const int step = rng.next_categorical(probs);
  const double lp = probs[step] > 0.0 ? std::log(probs[step])
                                      : -std::numeric_limits<double>::infinity();
  return {step, lp};
}

Trajectory rollout(const Problem& problem, const Generator& gen, RandomStream rng) {
  Trajectory traj;
  traj.problem_id = problem.id;
  for (int t = 0; t < problem.horizon && !traj.terminal; ++t) {
    RandomStream step_rng = rng.derive(static_cast<std::uint64_t>(t));
    auto [step, lp] = sample_step(gen, traj, step_rng);
    traj.steps.push_back(step);
    traj.step_logprobs.push_back(lp);
    if (problem.terminates(traj.length(), step)) finalize(problem, traj);
  }
  return traj;
}

void finalize(const Problem& problem, Trajectory& traj) {
  traj.terminal = true;
  traj.answer = answer_of(problem, traj.steps);
}

std::vector<int> tokens_of(const Problem& problem, std::span<const int> steps) {
  std::vector<int> tokens;
  tokens.reserve(steps.size() * static_cast<std::size_t>(problem.step_arity));
  for (int v : steps) {
    if (problem.has_end_marker() && v == problem.end_step) {
      tokens.push_back(v);
      continue;
    }
    int rem = v;
    for (int i = 0; i < problem.step_arity; ++i) {
      tokens.push_back(rem % problem.token_alphabet);
      rem /= problem.token_alphabet;
    }
  }
  return tokens;
}

int state_of(const Problem& problem, std::span<const int> steps) {
  return problem.rule->state(content_steps(problem, steps));
}

Answer answer_of(const Problem& problem, std::span<const int> steps) {
  return problem.rule->answer(content_steps(problem, steps));
}

}  // namespace tsmc
