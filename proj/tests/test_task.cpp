#include <doctest.h>

#include "tsmc/task.hpp"

using namespace tsmc;

namespace {

Problem uniform_problem(int alphabet, int horizon, std::shared_ptr<const AnswerRule> rule,
                        Answer correct) {
  Problem problem;
  problem.id = "test";
  problem.horizon = horizon;
  problem.token_alphabet = alphabet;
  problem.correct_answer = correct;
  problem.rule = std::move(rule);
  problem.generator = std::make_shared<PositionalGenerator>(
      Eigen::MatrixXd::Constant(horizon, alphabet, 1.0 / alphabet));
  problem.rollout = problem.generator;
  return problem;
}

Trajectory make_terminal(const Problem& problem, std::vector<int> steps) {
  Trajectory traj;
  traj.problem_id = problem.id;
  traj.steps = std::move(steps);
  traj.step_logprobs.assign(traj.steps.size(), 0.0);
  finalize(problem, traj);
  return traj;
}

}  // namespace

TEST_CASE("digit-sum answers are sums mod R") {
  const Problem problem = uniform_problem(4, 3, make_digit_sum_rule(4, 4, 1, 3), 3);
  CHECK(extract_answer(problem, make_terminal(problem, {1, 2, 0})) == 3);
  CHECK(extract_answer(problem, make_terminal(problem, {0, 0, 0})) == 0);

  Trajectory open;
  open.problem_id = "test";
  open.steps = {1};
  CHECK_THROWS_AS((void)extract_answer(problem, open), Error);
  try {
    (void)extract_answer(problem, open);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NotTerminal);
  }
}

TEST_CASE("branch-logic xor answer is the parity of all bits") {
  const Problem problem = uniform_problem(2, 2, make_xor_rule(2, 1, 0), 0);
  CHECK(extract_answer(problem, make_terminal(problem, {1, 1})) == 0);
  CHECK(extract_answer(problem, make_terminal(problem, {1, 0})) == 1);
}

TEST_CASE("correctness is equality with the ground truth") {
  const Problem problem = uniform_problem(4, 3, make_digit_sum_rule(4, 4, 1, 3), 3);
  CHECK(correctness(3, problem) == 1);
  CHECK(correctness(2, problem) == 0);
  for (Answer a = 0; a < 4; ++a) {
    const int phi = correctness(a, problem);
    CHECK(phi * phi == phi);  // binary idempotence
  }
}

TEST_CASE("sample_step matches the generator law") {
  SUBCASE("uniform binary") {
    const Problem problem = uniform_problem(2, 1, make_xor_rule(2, 1, 0), 0);
    RandomStream rng(5);
    int zeros = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      Trajectory empty;
      RandomStream draw = rng.derive(static_cast<std::uint64_t>(i));
      auto [step, lp] = sample_step(*problem.generator, empty, draw);
      zeros += step == 0 ? 1 : 0;
      CHECK(lp == step_logprob(*problem.generator, {}, step));
    }
    CHECK(static_cast<double>(zeros) / n == doctest::Approx(0.5).epsilon(0.02));
  }

  SUBCASE("skewed generator") {
    Eigen::MatrixXd probs(1, 2);
    probs << 0.9, 0.1;
    PositionalGenerator gen(probs);
    RandomStream rng(6);
    int zeros = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      Trajectory empty;
      RandomStream draw = rng.derive(static_cast<std::uint64_t>(i));
      zeros += sample_step(gen, empty, draw).first == 0 ? 1 : 0;
    }
    CHECK(static_cast<double>(zeros) / n == doctest::Approx(0.9).epsilon(0.011));
  }

  SUBCASE("terminal prefixes cannot be extended") {
    const Problem problem = uniform_problem(2, 2, make_xor_rule(2, 1, 0), 0);
    Trajectory done = make_terminal(problem, {0, 1});
    RandomStream rng(7);
    CHECK_THROWS_AS((void)sample_step(*problem.generator, done, rng), Error);
  }
}

TEST_CASE("step_logprob") {
  Eigen::MatrixXd probs(1, 4);
  probs << 0.25, 0.25, 0.25, 0.25;
  PositionalGenerator gen(probs);
  CHECK(step_logprob(gen, {}, 0) == doctest::Approx(std::log(0.25)));

  Eigen::MatrixXd with_zero(1, 2);
  with_zero << 1.0, 0.0;
  PositionalGenerator degenerate(with_zero);
  CHECK(step_logprob(degenerate, {}, 1) == -std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS((void)step_logprob(gen, {}, 9), Error);

  double total = 0.0;
  for (int a = 0; a < 4; ++a) total += std::exp(step_logprob(gen, {}, a));
  CHECK(std::abs(total - 1.0) <= 1e-12);
}

TEST_CASE("family generators are normalized at every position") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    TaskFamilySpec spec;
    spec.family = "digit-sum";
    spec.alphabet = 3;
    spec.horizon = 5;
    spec.modulus = 3;
    spec.skew = 1.7;
    spec.seed = seed;
    spec.end_marker = seed == 3;
    const Problem problem = make_problem(spec, 0);
    std::vector<int> prefix;
    for (int t = 0; t < spec.horizon; ++t) {
      const Eigen::VectorXd row = problem.generator->step_probs(prefix);
      CHECK(std::abs(row.sum() - 1.0) <= 1e-12);
      CHECK(row.minCoeff() >= 0.0);
      prefix.push_back(0);
    }
  }
}

TEST_CASE("suites are pure functions of their family description") {
  TaskFamilySpec spec;
  spec.family = "branch-logic";
  spec.rule = "and";
  spec.alphabet = 2;
  spec.horizon = 6;
  spec.groups = {1, 2, 3};
  spec.skew = 0.9;
  spec.seed = 15;
  spec.problem_count = 5;
  const auto a = make_suite(spec);
  const auto b = make_suite(spec);
  REQUIRE(a.size() == 5);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id == b[i].id);
    CHECK(a[i].correct_answer == b[i].correct_answer);
    CHECK(a[i].generator->step_probs(std::vector<int>{}) ==
          b[i].generator->step_probs(std::vector<int>{}));
  }
}

TEST_CASE("fixed-arity steps expand to base-K tokens") {
  TaskFamilySpec spec;
  spec.family = "digit-sum";
  spec.alphabet = 3;
  spec.horizon = 2;
  spec.modulus = 3;
  spec.step_arity = 2;
  spec.seed = 1;
  const Problem problem = make_problem(spec, 0);
  CHECK(problem.step_alphabet() == 9);
  // step value 7 = digits (1, 2) in base 3, low digit first
  const auto tokens = tokens_of(problem, std::vector<int>{7, 0});
  REQUIRE(tokens.size() == 4);
  CHECK(tokens[0] == 1);
  CHECK(tokens[1] == 2);
  CHECK(tokens[2] == 0);
  CHECK(tokens[3] == 0);
  // the answer counts all token digits
  CHECK(answer_of(problem, std::vector<int>{7, 0}) == (1 + 2) % 3);
}

TEST_CASE("early termination strips the end marker from answers") {
  TaskFamilySpec spec;
  spec.family = "digit-sum";
  spec.alphabet = 2;
  spec.horizon = 6;
  spec.modulus = 2;
  spec.end_marker = true;
  spec.end_prob = 0.4;
  spec.seed = 4;
  const Problem problem = make_problem(spec, 0);
  REQUIRE(problem.end_step == 2);
  CHECK(answer_of(problem, std::vector<int>{1, 1, 2}) == 0);
  CHECK(answer_of(problem, std::vector<int>{1, 2}) == 1);
  CHECK(problem.terminates(2, 2));
  CHECK(!problem.terminates(2, 1));
  CHECK(problem.terminates(6, 1));

  RandomStream rng(11);
  for (int i = 0; i < 50; ++i) {
    const Trajectory traj = rollout(problem, rng.derive(static_cast<std::uint64_t>(i)));
    CHECK(traj.terminal);
    CHECK(traj.answer.has_value());
    CHECK(traj.length() <= problem.horizon);
    CHECK(traj.step_logprobs.size() == traj.steps.size());
    for (double lp : traj.step_logprobs) CHECK(lp <= 0.0);
  }
}

TEST_CASE("digit-sum state tracks the residue still needed") {
  const Problem problem = uniform_problem(3, 4, make_digit_sum_rule(3, 3, 1, 2), 2);
  CHECK(state_of(problem, std::vector<int>{}) == 2);
  CHECK(state_of(problem, std::vector<int>{2}) == 0);
  CHECK(state_of(problem, std::vector<int>{1, 1}) == 0);
  // terminal state is 0 exactly when the answer is correct
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      const std::vector<int> steps{a, b, 0, 0};
      const bool correct = answer_of(problem, steps) == problem.correct_answer;
      CHECK((state_of(problem, steps) == 0) == correct);
    }
  }
}

TEST_CASE("out-of-budget specs are rejected") {
  TaskFamilySpec spec;
  spec.family = "digit-sum";
  spec.alphabet = 10;
  spec.horizon = 10;
  spec.modulus = 3;
  spec.enumeration_budget = 1000000;
  CHECK_THROWS_AS((void)make_problem(spec, 0), Error);
  try {
    (void)make_problem(spec, 0);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BudgetExceeded);
  }
}
