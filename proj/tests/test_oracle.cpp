#include <doctest.h>

#include "tsmc/oracle.hpp"

using namespace tsmc;

namespace {

Problem uniform_problem(int alphabet, int horizon, std::shared_ptr<const AnswerRule> rule,
                        Answer correct) {
  Problem problem;
  problem.id = "oracle-test";
  problem.horizon = horizon;
  problem.token_alphabet = alphabet;
  problem.correct_answer = correct;
  problem.rule = std::move(rule);
  problem.generator = std::make_shared<PositionalGenerator>(
      Eigen::MatrixXd::Constant(horizon, alphabet, 1.0 / alphabet));
  problem.rollout = problem.generator;
  return problem;
}

Problem iid_binary_problem(double p_one, int horizon, std::shared_ptr<const AnswerRule> rule,
                           Answer correct) {
  Eigen::MatrixXd probs(horizon, 2);
  for (int t = 0; t < horizon; ++t) {
    probs(t, 0) = 1.0 - p_one;
    probs(t, 1) = p_one;
  }
  Problem problem;
  problem.id = "oracle-binary";
  problem.horizon = horizon;
  problem.token_alphabet = 2;
  problem.correct_answer = correct;
  problem.rule = std::move(rule);
  problem.generator = std::make_shared<PositionalGenerator>(std::move(probs));
  problem.rollout = problem.generator;
  return problem;
}

// every solution counts as correct
class AlwaysCorrectRule final : public AnswerRule {
 public:
  int answer_count() const override { return 1; }
  Answer answer(std::span<const int>) const override { return 0; }
  int state(std::span<const int>) const override { return 0; }
  int state_count() const override { return 1; }
};

TaskFamilySpec skewed_spec(int alphabet, int horizon, int modulus, double skew,
                           std::uint64_t seed) {
  TaskFamilySpec spec;
  spec.family = "digit-sum";
  spec.alphabet = alphabet;
  spec.horizon = horizon;
  spec.modulus = modulus;
  spec.skew = skew;
  spec.seed = seed;
  return spec;
}

}  // namespace

TEST_CASE("enumeration lists the whole trajectory space") {
  const Problem small = uniform_problem(2, 3, make_xor_rule(2, 1, 0), 0);
  const auto trajectories = enumerate_trajectories(small);
  CHECK(trajectories.size() == 8);
  double total = 0.0;
  for (const Trajectory& traj : trajectories) {
    REQUIRE(traj.terminal);
    double lp = 0.0;
    for (double step_lp : traj.step_logprobs) lp += step_lp;
    total += std::exp(lp);
  }
  CHECK(std::abs(total - 1.0) <= 1e-10);

  const Problem bigger = make_problem(skewed_spec(3, 6, 3, 0.8, 12), 0);
  CHECK(enumerate_trajectories(bigger).size() == 729);
}

TEST_CASE("exact partition") {
  SUBCASE("single correct trajectory under a uniform generator") {
    // sum mod 4 equals 2 only for steps [1, 1]
    const Problem problem = uniform_problem(2, 2, make_digit_sum_rule(4, 2, 1, 2), 2);
    auto oracle = Oracle::build(problem);
    CHECK(exact_partition(*oracle) == doctest::Approx(0.25).epsilon(1e-12));
  }

  SUBCASE("phi identically one gives total mass") {
    Problem problem = uniform_problem(3, 3, std::make_shared<AlwaysCorrectRule>(), 0);
    auto oracle = Oracle::build(problem);
    CHECK(std::abs(exact_partition(*oracle) - 1.0) <= 1e-10);
  }

  SUBCASE("exhaustive sum agrees with the backward recursion") {
    for (std::uint64_t seed : {12ull, 13ull, 14ull}) {
      auto oracle = Oracle::build(make_problem(skewed_spec(3, 5, 3, 1.2, seed), 0));
      CHECK(std::abs(oracle->z_sigma() - oracle->z_recursion()) <= 1e-10);
    }
  }

  SUBCASE("no correct trajectory is rejected") {
    // sums of two binary digits never reach 3
    const Problem problem = uniform_problem(2, 2, make_digit_sum_rule(4, 2, 1, 3), 3);
    CHECK_THROWS_AS((void)Oracle::build(problem), Error);
    try {
      (void)Oracle::build(problem);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::DegenerateTarget);
    }
  }
}

TEST_CASE("exact value function") {
  SUBCASE("uniform XOR is half everywhere before the end") {
    const Problem problem = uniform_problem(2, 2, make_xor_rule(2, 1, 1), 1);
    auto oracle = Oracle::build(problem);
    CHECK(exact_value(*oracle, std::vector<int>{}) == doctest::Approx(0.5));
    CHECK(exact_value(*oracle, std::vector<int>{0}) == doctest::Approx(0.5));
  }

  SUBCASE("terminal values are phi") {
    const Problem problem = uniform_problem(2, 2, make_xor_rule(2, 1, 1), 1);
    auto oracle = Oracle::build(problem);
    CHECK(exact_value(*oracle, std::vector<int>{0, 1}) == 1.0);
    CHECK(exact_value(*oracle, std::vector<int>{1, 1}) == 0.0);
  }

  SUBCASE("iid skew compounds multiplicatively") {
    // answer 3 mod 4 is reached only by all-ones; V(empty) = 0.8^3
    const Problem problem = iid_binary_problem(0.8, 3, make_digit_sum_rule(4, 2, 1, 3), 3);
    auto oracle = Oracle::build(problem);
    CHECK(exact_value(*oracle, std::vector<int>{}) == doctest::Approx(0.512).epsilon(1e-12));
  }

  SUBCASE("arbitrary policies run through the same recursion") {
    TaskFamilySpec spec = skewed_spec(3, 4, 3, 1.0, 22);
    spec.rollout_skew_shift = 0.7;
    const Problem problem = make_problem(spec, 0);
    auto oracle = Oracle::build(problem);
    const Eigen::VectorXd under_p = exact_values(problem, *problem.generator);
    const Eigen::VectorXd under_mu = exact_values(problem, *problem.rollout);
    CHECK((under_p - oracle->values(Policy::p)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((under_mu - oracle->values(Policy::mu)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((under_p - under_mu).cwiseAbs().maxCoeff() > 1e-6);
  }
}

TEST_CASE("sigma marginals") {
  const Problem problem = make_problem([] {
    TaskFamilySpec spec;
    spec.family = "branch-logic";
    spec.rule = "and";
    spec.alphabet = 2;
    spec.horizon = 6;
    spec.groups = {1, 2, 3};
    spec.skew = 0.9;
    spec.seed = 15;
    return spec;
  }(), 0);
  auto oracle = Oracle::build(problem);

  CHECK(exact_sigma_marginal(*oracle, std::vector<int>{}) == doctest::Approx(1.0).epsilon(1e-12));

  // a dead prefix carries no target mass and zero ground-truth reward
  std::int64_t dead = -1;
  for (std::int64_t node = 1; node < oracle->tree().node_count(); ++node) {
    if (oracle->prefix_prob(node) > 0.0 && !oracle->is_terminal(node) &&
        oracle->value(node) == 0.0) {
      dead = node;
      break;
    }
  }
  REQUIRE(dead >= 0);
  const auto dead_steps = oracle->tree().steps_of(dead);
  CHECK(exact_sigma_marginal(*oracle, dead_steps) == 0.0);
  CHECK(ground_truth_prm(*oracle, dead_steps) == 0);
  CHECK(ground_truth_prm(*oracle, std::vector<int>{}) == 1);

  for (int t = 1; t <= problem.horizon; ++t) {
    CHECK(std::abs(oracle->sigma_level(t).sum() - 1.0) <= 1e-10);
  }
}

TEST_CASE("exact answer weights") {
  const Problem problem = make_problem(skewed_spec(3, 4, 3, 0.9, 21), 0);
  auto oracle = Oracle::build(problem);

  const Eigen::VectorXd w_phi = exact_answer_weights(*oracle);
  for (int a = 0; a < 3; ++a) {
    if (a == problem.correct_answer) {
      CHECK(w_phi[a] == doctest::Approx(oracle->z_sigma()).epsilon(1e-12));
    } else {
      CHECK(w_phi[a] == 0.0);
    }
  }

  const Eigen::VectorXd w_one = exact_answer_weights(*oracle, true);
  CHECK(std::abs(w_one.sum() - 1.0) <= 1e-10);

  // brute force over all 81 trajectories, straight from the generator
  Eigen::Vector3d brute = Eigen::Vector3d::Zero();
  for (const Trajectory& traj : enumerate_trajectories(problem)) {
    double lp = 0.0;
    for (double step_lp : traj.step_logprobs) lp += step_lp;
    brute[*traj.answer] += std::exp(lp);
  }
  for (int a = 0; a < 3; ++a) CHECK(std::abs(w_one[a] - brute[a]) <= 1e-10);
}

TEST_CASE("ground-truth PRM aggregates to phi along every trajectory") {
  for (const char* family : {"digit-sum", "branch-logic"}) {
    TaskFamilySpec spec;
    spec.family = family;
    spec.alphabet = family == std::string("digit-sum") ? 3 : 2;
    spec.horizon = 5;
    spec.modulus = 3;
    spec.rule = "and";
    spec.groups = {2, 3};
    spec.skew = 0.8;
    spec.seed = 17;
    const Problem problem = make_problem(spec, 0);
    auto oracle = Oracle::build(problem);
    for (std::int64_t leaf : oracle->leaves()) {
      const auto steps = oracle->tree().steps_of(leaf);
      const int phi = correctness(answer_of(problem, steps), problem);
      int agg = 1;
      for (std::size_t t = 1; t <= steps.size(); ++t) {
        agg = std::min(agg, oracle->prm(std::span<const int>(steps.data(), t)));
      }
      CHECK(agg == phi);
    }
  }
}

TEST_CASE("variance identity terms") {
  // binary skew-0.7 instance, all four outcomes checked against direct sums
  const Problem problem = iid_binary_problem(0.3, 2, make_digit_sum_rule(2, 2, 1, 1), 1);
  auto oracle = Oracle::build(problem);
  const auto& leaves = oracle->leaves();
  REQUIRE(leaves.size() == 4);

  Eigen::VectorXd q(4);
  q << 0.4, 0.3, 0.2, 0.1;
  const VarianceIdentity terms = variance_identity_terms(*oracle, q);

  // independent reference computation over the four outcomes
  double lhs = 0.0;
  double rhs = 0.0;
  double z = 0.0;
  Eigen::Vector2d wa = Eigen::Vector2d::Zero();
  std::vector<double> sigma_tilde(4);
  std::vector<int> answers(4);
  for (int i = 0; i < 4; ++i) {
    const auto steps = oracle->tree().steps_of(leaves[static_cast<std::size_t>(i)]);
    answers[static_cast<std::size_t>(i)] = answer_of(problem, steps);
    const double p = oracle->prefix_prob(leaves[static_cast<std::size_t>(i)]);
    sigma_tilde[static_cast<std::size_t>(i)] =
        p * correctness(answers[static_cast<std::size_t>(i)], problem);
    z += sigma_tilde[static_cast<std::size_t>(i)];
    wa[answers[static_cast<std::size_t>(i)]] += sigma_tilde[static_cast<std::size_t>(i)];
  }
  for (int a = 0; a < 2; ++a) {
    double m1 = 0.0;
    double m2 = 0.0;
    for (int i = 0; i < 4; ++i) {
      if (answers[static_cast<std::size_t>(i)] != a) continue;
      m1 += sigma_tilde[static_cast<std::size_t>(i)];
      m2 += sigma_tilde[static_cast<std::size_t>(i)] * sigma_tilde[static_cast<std::size_t>(i)] / q[i];
    }
    lhs += m2 - m1 * m1;
  }
  {
    double m2 = 0.0;
    for (int i = 0; i < 4; ++i) {
      m2 += sigma_tilde[static_cast<std::size_t>(i)] * sigma_tilde[static_cast<std::size_t>(i)] / q[i];
    }
    rhs = m2 - z * z;
  }
  const double c = z * z - wa.squaredNorm();

  CHECK(terms.lhs == doctest::Approx(lhs).epsilon(1e-12));
  CHECK(terms.rhs_variance == doctest::Approx(rhs).epsilon(1e-12));
  CHECK(terms.c == doctest::Approx(c).epsilon(1e-12));
  CHECK(std::abs(terms.lhs - terms.rhs_variance - terms.c) <= 1e-10);

  // a perfect proposal has zero weight variance
  Eigen::VectorXd q_sigma(4);
  for (int i = 0; i < 4; ++i) q_sigma[i] = sigma_tilde[static_cast<std::size_t>(i)] / z;
  const VarianceIdentity perfect = variance_identity_terms(*oracle, q_sigma);
  CHECK(std::abs(perfect.rhs_variance) <= 1e-12);
  CHECK(perfect.lhs == doctest::Approx(perfect.c).epsilon(1e-9));

  // proposals must cover the target support
  Eigen::VectorXd bad = q;
  for (int i = 0; i < 4; ++i) {
    if (sigma_tilde[static_cast<std::size_t>(i)] > 0.0) bad[i] = 0.0;
  }
  CHECK_THROWS_AS((void)variance_identity_terms(*oracle, bad), Error);
}

TEST_CASE("optimal previous target") {
  const Problem problem = make_problem(skewed_spec(3, 4, 3, 0.8, 12), 0);
  auto oracle = Oracle::build(problem);
  const PrefixTree& tree = oracle->tree();
  const int t = problem.horizon;

  SUBCASE("output is a distribution") {
    const Eigen::VectorXd prev =
        optimal_prev_target(tree, oracle->sigma_level(t), t, *problem.generator);
    CHECK(prev.minCoeff() >= 0.0);
    CHECK(std::abs(prev.sum() - 1.0) <= 1e-12);
  }

  SUBCASE("q = p reproduces the p sqrt(V) form") {
    const Eigen::VectorXd prev =
        optimal_prev_target(tree, oracle->sigma_level(t), t, *problem.generator);
    Eigen::VectorXd expected(tree.level_size(t - 1));
    const std::int64_t begin = tree.level_offset(t - 1);
    for (std::int64_t m = 0; m < expected.size(); ++m) {
      expected[m] = oracle->prefix_prob(begin + m) * std::sqrt(oracle->value(begin + m));
    }
    expected /= expected.sum();
    CHECK((prev - expected).cwiseAbs().maxCoeff() <= 1e-10);
  }

  SUBCASE("beats random perturbations") {
    const Eigen::VectorXd pi_t = oracle->sigma_level(t);
    const Eigen::VectorXd opt = optimal_prev_target(tree, pi_t, t, *problem.generator);
    const double var_opt = incremental_weight_variance(tree, opt, pi_t, t, *problem.generator);
    RandomStream rng(77);
    for (int k = 0; k < 50; ++k) {
      Eigen::VectorXd perturbed = opt;
      RandomStream draw = rng.derive(static_cast<std::uint64_t>(k));
      for (Eigen::Index m = 0; m < perturbed.size(); ++m) {
        if (perturbed[m] > 0.0) perturbed[m] *= std::exp(0.3 * draw.next_gauss());
      }
      perturbed /= perturbed.sum();
      CHECK(var_opt <=
            incremental_weight_variance(tree, perturbed, pi_t, t, *problem.generator) + 1e-12);
    }
  }
}

TEST_CASE("tower property and marginal consistency on random instances") {
  for (std::uint64_t seed = 30; seed < 34; ++seed) {
    const Problem problem = make_problem(skewed_spec(3, 5, 3, 1.1, seed), 0);
    auto oracle = Oracle::build(problem);
    const PrefixTree& tree = oracle->tree();
    for (std::int64_t node = 0; node < tree.node_count(); ++node) {
      if (oracle->is_terminal(node)) continue;
      const auto steps = tree.steps_of(node);
      const Eigen::VectorXd probs = problem.generator->step_probs(steps);
      double one_step = 0.0;
      double child_sigma = 0.0;
      for (int a = 0; a < tree.alphabet(); ++a) {
        one_step += probs[a] * oracle->value(tree.child(node, a));
        child_sigma += oracle->sigma(tree.child(node, a));
      }
      CHECK(std::abs(one_step - oracle->value(node)) <= 1e-10);
      CHECK(std::abs(child_sigma - oracle->sigma(node)) <= 1e-10);
    }
  }
}

TEST_CASE("oracle builds respect the enumeration budget") {
  const Problem problem = uniform_problem(4, 6, make_digit_sum_rule(4, 4, 1, 0), 0);
  CHECK_THROWS_AS((void)Oracle::build(problem, 1000), Error);
}
