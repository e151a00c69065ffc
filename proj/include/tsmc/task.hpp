#ifndef TSMC_TASK_HPP
#define TSMC_TASK_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tsmc/errors.hpp"
#include "tsmc/random.hpp"

namespace tsmc {

using Answer = int;

/// A step-segmented candidate solution. Steps are symbols from the problem's
/// step alphabet (token groups of fixed arity, plus an optional end marker).
struct Trajectory {
  std::string problem_id;
  std::vector<int> steps;
  std::vector<double> step_logprobs;
  bool terminal = false;
  std::optional<Answer> answer;

  int length() const { return static_cast<int>(steps.size()); }
};

/// Next-step distribution contract. Implementations are immutable after
/// construction and safe for concurrent reads.
class Generator {
 public:
  virtual ~Generator() = default;
  virtual int step_alphabet() const = 0;
  virtual int horizon() const = 0;
  /// Probabilities over the step alphabet for extending `prefix` (length t < horizon).
  /// Rows sum to one within 1e-12.
  virtual Eigen::VectorXd step_probs(std::span<const int> prefix) const = 0;
};

/// Categorical next-step law with one distribution per position. History enters
/// only through the position, which keeps every oracle a small dynamic program.
class PositionalGenerator final : public Generator {
 public:
  /// `probs` is horizon x alphabet, row-stochastic.
  explicit PositionalGenerator(Eigen::MatrixXd probs);

  int step_alphabet() const override { return static_cast<int>(probs_.cols()); }
  int horizon() const override { return static_cast<int>(probs_.rows()); }
  Eigen::VectorXd step_probs(std::span<const int> prefix) const override;

  const Eigen::MatrixXd& matrix() const { return probs_; }

 private:
  Eigen::MatrixXd probs_;
};

/// Family-specific answer extraction plus the sufficient statistic used by
/// tabular value models. `state` is computed from the steps emitted so far and
/// must stay in [0, state_count()).
class AnswerRule {
 public:
  virtual ~AnswerRule() = default;
  virtual int answer_count() const = 0;
  virtual Answer answer(std::span<const int> steps) const = 0;
  virtual int state(std::span<const int> steps) const = 0;
  virtual int state_count() const = 0;
};

struct Problem {
  std::string id;
  int horizon = 1;                 // T, steps per complete trajectory
  int step_arity = 1;              // tokens per step
  int token_alphabet = 2;          // K, per-token symbol count
  Answer correct_answer = 0;
  std::shared_ptr<const AnswerRule> rule;
  std::shared_ptr<const Generator> generator;  // p
  std::shared_ptr<const Generator> rollout;    // mu; aliases generator when matched
  int end_step = -1;               // step symbol that terminates early, -1 = none

  int step_alphabet() const { return generator->step_alphabet(); }
  int answer_count() const { return rule->answer_count(); }
  bool has_end_marker() const { return end_step >= 0; }
  /// True when a prefix of `t` steps whose last symbol is `last` is complete.
  bool terminates(int t, int last) const {
    return t >= horizon || (end_step >= 0 && last == end_step);
  }
};

/// Task family configuration. Loadable from a config file; see docs/config.md.
struct TaskFamilySpec {
  std::string family = "digit-sum";  // "digit-sum" | "branch-logic"
  int alphabet = 3;                  // K, token alphabet size
  int horizon = 6;                   // T
  int modulus = 3;                   // R: digit-sum answers are sums mod R
  std::string rule = "xor";          // branch-logic: "xor" | "and"
  std::vector<int> groups;           // branch-logic parity groups; must sum to horizon
  double skew = 0.0;                 // per-position generator skew scale
  std::string skew_direction = "random";  // "random" | "down" | "up"
  std::vector<double> skew_profile;  // explicit per-position skews; overrides skew
  double rollout_skew_shift = 0.0;   // extra skew for the roll-out policy mu
  int fixed_correct_answer = -1;     // pin the target answer; -1 draws it
  int step_arity = 1;
  bool end_marker = false;           // append an early-termination symbol
  double end_prob = 0.2;             // its per-step probability
  std::uint64_t seed = 0;
  int problem_count = 1;
  std::int64_t enumeration_budget = 1'000'000;
};

/// Deterministic problem construction: problem `index` of the family is a pure
/// function of (spec, index).
Problem make_problem(const TaskFamilySpec& spec, int index);
std::vector<Problem> make_suite(const TaskFamilySpec& spec);

/// Rule factories for hand-built problem instances.
std::shared_ptr<const AnswerRule> make_digit_sum_rule(int modulus, int base, int arity,
                                                      Answer correct);
std::shared_ptr<const AnswerRule> make_xor_rule(int base, int arity, Answer correct);
std::shared_ptr<const AnswerRule> make_and_xor_rule(std::vector<int> groups,
                                                    std::vector<int> targets, int base, int arity);

/// phi: 1 iff the answer matches the problem's ground truth.
inline int correctness(Answer answer, const Problem& problem) {
  return answer == problem.correct_answer ? 1 : 0;
}

/// Answer of a complete trajectory. NotTerminal if the trajectory is unfinished.
Answer extract_answer(const Problem& problem, const Trajectory& traj);

/// log p(step | prefix) under `gen`. InvalidStep if the symbol is out of range;
/// zero-probability steps give -inf.
double step_logprob(const Generator& gen, std::span<const int> prefix, int step);

/// Draw the next step for an unfinished trajectory. TerminalPrefix otherwise.
std::pair<int, double> sample_step(const Generator& gen, const Trajectory& prefix,
                                   RandomStream& rng);

/// Full rollout from p (or a supplied policy), finalizing answer and phi.
Trajectory rollout(const Problem& problem, const Generator& gen, RandomStream rng);
inline Trajectory rollout(const Problem& problem, RandomStream rng) {
  return rollout(problem, *problem.generator, rng);
}

/// Finalize a complete trajectory in place: mark terminal and extract the answer.
void finalize(const Problem& problem, Trajectory& traj);

/// Token view of a step sequence: base-K digits of each symbol (end markers
/// pass through as the symbol itself).
std::vector<int> tokens_of(const Problem& problem, std::span<const int> steps);

/// Rule state / answer with end markers stripped.
int state_of(const Problem& problem, std::span<const int> steps);
Answer answer_of(const Problem& problem, std::span<const int> steps);

}  // namespace tsmc

#endif
