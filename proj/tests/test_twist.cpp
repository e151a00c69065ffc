#include <doctest.h>

#include "tsmc/twist.hpp"

using namespace tsmc;

namespace {

TaskFamilySpec spec_of(const std::string& family, int alphabet, int horizon, int modulus,
                       double skew, std::uint64_t seed) {
  TaskFamilySpec spec;
  spec.family = family;
  spec.alphabet = alphabet;
  spec.horizon = horizon;
  spec.modulus = modulus;
  spec.skew = skew;
  spec.seed = seed;
  return spec;
}

}  // namespace

TEST_CASE("twist evaluation by kind") {
  const Problem problem = make_problem(spec_of("digit-sum", 3, 4, 3, 0.9, 51), 0);
  auto oracle = Oracle::build(problem);
  const PrefixTree& tree = oracle->tree();

  const TwistModel sqrt_twist(TwistKind::sqrt_value_exact, oracle);
  const TwistModel value_twist(TwistKind::value_exact, oracle);
  const TwistModel prm_twist(TwistKind::step_correctness_exact, oracle);
  const TwistModel constant(TwistKind::constant, problem);

  // psi_0 is one for every kind
  CHECK(sqrt_twist.eval(std::vector<int>{}) == 1.0);
  CHECK(value_twist.eval(std::vector<int>{}) == 1.0);
  CHECK(prm_twist.eval(std::vector<int>{}) == 1.0);
  CHECK(constant.eval(std::vector<int>{}) == 1.0);

  for (std::int64_t node = 1; node < tree.node_count(); ++node) {
    if (oracle->prefix_prob(node) == 0.0) continue;
    const auto steps = tree.steps_of(node);
    CHECK(sqrt_twist.eval(steps) ==
          doctest::Approx(std::sqrt(oracle->value(node))).epsilon(1e-12));
    CHECK(value_twist.eval(steps) == doctest::Approx(oracle->value(node)).epsilon(1e-12));
    CHECK(prm_twist.eval(steps) == static_cast<double>(ground_truth_prm(*oracle, steps)));
    CHECK(constant.eval(steps) == 1.0);
    CHECK(sqrt_twist.eval(steps) >= 0.0);
  }
}

TEST_CASE("mismatched-policy twist reads the rollout value") {
  TaskFamilySpec spec = spec_of("digit-sum", 3, 4, 3, 0.9, 52);
  spec.rollout_skew_shift = 1.0;
  const Problem problem = make_problem(spec, 0);
  auto oracle = Oracle::build(problem);
  const TwistModel mu_twist(TwistKind::value_mismatched_policy, oracle);
  bool saw_difference = false;
  for (std::int64_t node = 1; node < oracle->tree().node_count(); ++node) {
    const auto steps = oracle->tree().steps_of(node);
    const double expected = std::sqrt(oracle->value(node, Policy::mu));
    CHECK(mu_twist.eval(steps) == doctest::Approx(expected).epsilon(1e-12));
    if (std::abs(oracle->value(node, Policy::mu) - oracle->value(node, Policy::p)) > 1e-6) {
      saw_difference = true;
    }
  }
  CHECK(saw_difference);
}

TEST_CASE("incremental weights follow the twist ratios") {
  const Problem problem = make_problem(spec_of("digit-sum", 2, 3, 2, 0.8, 53), 0);
  auto oracle = Oracle::build(problem);
  const TwistModel twist(TwistKind::sqrt_value_exact, oracle);

  SUBCASE("non-terminal ratio") {
    const std::vector<int> prefix{1};
    const double w = incremental_weight(twist, prefix, 0, false, 0.0);
    const double expected = twist.eval(std::vector<int>{1, 0}) / twist.eval(prefix);
    CHECK(w == doctest::Approx(expected).epsilon(1e-12));
  }

  SUBCASE("flat values give weight one") {
    // uniform XOR task: V is 0.5 on every interior prefix
    const Problem flat = [] {
      TaskFamilySpec spec;
      spec.family = "branch-logic";
      spec.rule = "xor";
      spec.alphabet = 2;
      spec.horizon = 3;
      spec.seed = 54;
      return make_problem(spec, 0);
    }();
    auto flat_oracle = Oracle::build(flat);
    const TwistModel flat_twist(TwistKind::sqrt_value_exact, flat_oracle);
    CHECK(incremental_weight(flat_twist, std::vector<int>{0}, 1, false, 0.0) ==
          doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("terminal weight divides the ancestor twist") {
    const std::vector<int> prefix{1, 1};
    const double w = incremental_weight(twist, prefix, 0, true, 1.0);
    CHECK(w == doctest::Approx(1.0 / twist.eval(prefix)).epsilon(1e-12));
  }

  SUBCASE("zero ancestor twist is an error") {
    TaskFamilySpec spec;
    spec.family = "branch-logic";
    spec.rule = "and";
    spec.alphabet = 2;
    spec.horizon = 4;
    spec.groups = {1, 3};
    spec.seed = 55;
    const Problem and_problem = make_problem(spec, 0);
    auto and_oracle = Oracle::build(and_problem);
    const TwistModel and_twist(TwistKind::sqrt_value_exact, and_oracle);
    // find a dead depth-1 prefix
    int dead_step = -1;
    for (int a = 0; a < 2; ++a) {
      if (and_oracle->value(std::vector<int>{a}) == 0.0) dead_step = a;
    }
    REQUIRE(dead_step >= 0);
    CHECK_THROWS_AS(
        (void)incremental_weight(and_twist, std::vector<int>{dead_step}, 0, false, 0.0), Error);
  }
}

TEST_CASE("telescoping: weight products equal phi on any trajectory") {
  const Problem problem = make_problem(spec_of("digit-sum", 3, 5, 3, 1.2, 56), 0);
  auto oracle = Oracle::build(problem);
  for (const TwistKind kind :
       {TwistKind::sqrt_value_exact, TwistKind::value_exact, TwistKind::constant}) {
    const TwistModel twist = kind == TwistKind::constant ? TwistModel(kind, problem)
                                                         : TwistModel(kind, oracle);
    RandomStream rng(57);
    for (int i = 0; i < 200; ++i) {
      const Trajectory traj = rollout(problem, rng.derive(static_cast<std::uint64_t>(i)));
      double product = 1.0;
      for (int t = 1; t <= traj.length(); ++t) {
        const std::span<const int> prev(traj.steps.data(), static_cast<std::size_t>(t - 1));
        const bool terminal = t == traj.length();
        const double phi = correctness(*traj.answer, problem);
        product *= incremental_weight(twist, prev, traj.steps[static_cast<std::size_t>(t - 1)],
                                      terminal, phi);
      }
      CHECK(std::abs(product - correctness(*traj.answer, problem)) <= 1e-9);
    }
  }
}

TEST_CASE("learned model outputs stay inside (0,1)") {
  ValueModel model(4, 3);
  model.params().setConstant(40.0);
  CHECK(model.value_at(2, 1) < 1.0);
  model.params().setConstant(-40.0);
  CHECK(model.value_at(2, 1) > 0.0);
}

TEST_CASE("noisy values are deterministic in (seed, problem, prefix)") {
  const Problem problem = make_problem(spec_of("digit-sum", 3, 4, 3, 0.9, 58), 0);
  auto oracle = Oracle::build(problem);
  auto base = std::make_shared<ExactValueFn>(oracle);
  const NoisyValueFn a(base, 0.3, 99);
  const NoisyValueFn b(base, 0.3, 99);
  const NoisyValueFn c(base, 0.3, 100);
  const std::vector<int> prefix{1, 2};
  CHECK(a.value(problem, prefix) == b.value(problem, prefix));
  CHECK(a.value(problem, prefix) != c.value(problem, prefix));
  CHECK(a.value(problem, prefix) > 0.0);
  // zero stays zero: corruption cannot resurrect a dead prefix
  TaskFamilySpec and_spec = spec_of("branch-logic", 2, 4, 2, 0.5, 59);
  and_spec.rule = "and";
  and_spec.groups = {1, 3};
  const Problem and_problem = make_problem(and_spec, 0);
  auto and_oracle = Oracle::build(and_problem);
  const NoisyValueFn noisy(std::make_shared<ExactValueFn>(and_oracle), 0.3, 1);
  for (int a2 = 0; a2 < 2; ++a2) {
    if (and_oracle->value(std::vector<int>{a2}) == 0.0) {
      CHECK(noisy.value(and_problem, std::vector<int>{a2}) == 0.0);
    }
  }
}

TEST_CASE("ctl batches and gradients") {
  const Problem problem = make_problem(spec_of("digit-sum", 3, 4, 3, 0.8, 60), 0);

  SUBCASE("batch shape and phi") {
    const CtlBatch batch = make_ctl_batch(problem, 32, RandomStream(61));
    CHECK(batch.trajectories.size() == 32);
    for (int i = 0; i < 32; ++i) {
      const Trajectory& traj = batch.trajectories[static_cast<std::size_t>(i)];
      CHECK(traj.terminal);
      CHECK(batch.phi[i] == correctness(*traj.answer, problem));
    }
  }

  SUBCASE("all-correct batch with uniform weights has zero gradient") {
    CtlBatch batch = make_ctl_batch(problem, 16, RandomStream(62));
    batch.phi.setOnes();  // as if every sample were correct
    ValueModel model(problem.horizon, problem.rule->state_count());
    // theta = 0 makes every one-step ratio equal, so both terms cancel exactly
    const Eigen::VectorXd grad = ctl_gradient(model, batch);
    CHECK(grad.cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("batches without positives are rejected") {
    CtlBatch batch = make_ctl_batch(problem, 8, RandomStream(63));
    batch.phi.setZero();
    ValueModel model(problem.horizon, problem.rule->state_count());
    CHECK_THROWS_AS((void)ctl_gradient(model, batch), Error);
  }

  SUBCASE("coefficients are invariant to rescaling the values at one step") {
    const CtlBatch batch = make_ctl_batch(problem, 24, RandomStream(64));
    ValueModel model(problem.horizon, problem.rule->state_count());
    RandomStream rng(65);
    for (Eigen::Index i = 0; i < model.params().size(); ++i) {
      model.params()[i] = rng.next_gauss();
    }
    const Eigen::MatrixXd before = ctl_coefficients(model, batch);

    // scale V at step 2 by c via the logit; every V at that step shrinks alike
    const double c = 0.5;
    ValueModel scaled = model;
    for (int s = 0; s < scaled.state_count(); ++s) {
      const double v = c * model.value_at(2, s);
      scaled.params()[scaled.index(2, s)] = std::log(v / (1.0 - v));
    }
    const Eigen::MatrixXd after = ctl_coefficients(scaled, batch);
    CHECK((before - after).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("exact CTL gradient vanishes at the exact value function") {
  const Problem problem = make_problem(spec_of("digit-sum", 3, 4, 3, 0.9, 66), 0);
  auto oracle = Oracle::build(problem);
  ValueModel model(problem.horizon, problem.rule->state_count());
  const PrefixTree& tree = oracle->tree();
  for (int t = 1; t <= problem.horizon; ++t) {
    const std::int64_t begin = tree.level_offset(t);
    for (std::int64_t j = 0; j < tree.level_size(t); ++j) {
      const auto steps = tree.steps_of(begin + j);
      const double v = std::clamp(oracle->value(begin + j), 1e-9, 1.0 - 1e-9);
      model.params()[model.index(t, state_of(problem, steps))] = std::log(v / (1.0 - v));
    }
  }
  CHECK(ctl_gradient_exact(model, *oracle).cwiseAbs().maxCoeff() <= 1e-4);
  // objective near its floor: every interior marginal matches
  CHECK(ctl_objective_exact(model, *oracle) <= 1e-4);
}

TEST_CASE("training improves the value fit and is reproducible") {
  TaskFamilySpec train_spec = spec_of("digit-sum", 3, 5, 3, 1.0, 70);
  train_spec.problem_count = 6;
  const auto train = make_suite(train_spec);

  CtlConfig config;
  config.samples_per_problem = 40;
  config.epochs = 8;
  config.learning_rate = 0.5;
  config.seed = 71;

  const TrainResult first = train_ctl(train, {}, config);
  const TrainResult second = train_ctl(train, {}, config);
  CHECK(first.model.params() == second.model.params());  // bit-for-bit rerun

  REQUIRE(first.log.size() == static_cast<std::size_t>(config.epochs) + 1);
  CHECK(first.log.back().validation_objective < first.log.front().validation_objective);

  // value error against the exact oracle shrinks from the flat initialization,
  // measured on a held-out sample of prefixes drawn from the generator
  ValueModel init(first.model.horizon(), first.model.state_count());
  double err_init = 0.0;
  double err_trained = 0.0;
  int count = 0;
  RandomStream heldout(72);
  for (const Problem& problem : train) {
    auto oracle = Oracle::build(problem);
    for (int i = 0; i < 100; ++i) {
      const Trajectory traj =
          rollout(problem, heldout.derive(RandomStream::fnv1a(problem.id)).derive(
                               static_cast<std::uint64_t>(i)));
      for (int t = 1; t <= traj.length(); ++t) {
        const std::span<const int> prefix(traj.steps.data(), static_cast<std::size_t>(t));
        const double v = oracle->value(prefix);
        err_init += std::abs(init.value(problem, prefix) - v);
        err_trained += std::abs(first.model.value(problem, prefix) - v);
        ++count;
      }
    }
  }
  CHECK(err_trained / count < err_init / count);
}

TEST_CASE("families where every answer is correct are untrainable") {
  class AlwaysCorrect final : public AnswerRule {
   public:
    int answer_count() const override { return 1; }
    Answer answer(std::span<const int>) const override { return 0; }
    int state(std::span<const int>) const override { return 0; }
    int state_count() const override { return 1; }
  };
  Problem trivial;
  trivial.id = "trivial";
  trivial.horizon = 3;
  trivial.token_alphabet = 2;
  trivial.correct_answer = 0;
  trivial.rule = std::make_shared<AlwaysCorrect>();
  trivial.generator =
      std::make_shared<PositionalGenerator>(Eigen::MatrixXd::Constant(3, 2, 0.5));
  trivial.rollout = trivial.generator;

  CtlConfig config;
  config.samples_per_problem = 8;
  config.epochs = 2;
  std::vector<Problem> train{trivial};
  CHECK_THROWS_AS((void)train_ctl(train, {}, config), Error);
  try {
    (void)train_ctl(train, {}, config);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoTrainableData);
  }
}

TEST_CASE("training data with no correct solutions is rejected") {
  // correct answer 3 needs a digit sum of 3 from two binary digits
  Problem impossible;
  impossible.id = "impossible";
  impossible.horizon = 2;
  impossible.token_alphabet = 2;
  impossible.correct_answer = 3;
  impossible.rule = make_digit_sum_rule(4, 2, 1, 3);
  impossible.generator = std::make_shared<PositionalGenerator>(
      Eigen::MatrixXd::Constant(2, 2, 0.5));
  impossible.rollout = impossible.generator;

  CtlConfig config;
  config.samples_per_problem = 8;
  config.epochs = 1;
  std::vector<Problem> train{impossible};
  CHECK_THROWS_AS((void)train_ctl(train, {}, config), Error);
  try {
    (void)train_ctl(train, {}, config);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoTrainableData);
  }
}
