#include "tsmc/propcheck.hpp"

#include <chrono>
#include <cmath>
#include <map>
#include <sstream>

#include "tsmc/estimators.hpp"

namespace tsmc {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

// --- reference instances ---------------------------------------------------

TaskFamilySpec digit_sum_spec(int alphabet, int horizon, int modulus, double skew,
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

TaskFamilySpec branch_logic_spec(const std::string& rule, int horizon, std::vector<int> groups,
                                 double skew, std::uint64_t seed) {
  TaskFamilySpec spec;
  spec.family = "branch-logic";
  spec.alphabet = 2;
  spec.horizon = horizon;
  spec.rule = rule;
  spec.groups = std::move(groups);
  spec.skew = skew;
  spec.seed = seed;
  return spec;
}

Problem explicit_binary_problem(const std::string& id, double p_zero, int horizon, int modulus,
                                Answer correct) {
  Eigen::MatrixXd probs(horizon, 2);
  for (int t = 0; t < horizon; ++t) {
    probs(t, 0) = p_zero;
    probs(t, 1) = 1.0 - p_zero;
  }
  Problem problem;
  problem.id = id;
  problem.horizon = horizon;
  problem.token_alphabet = 2;
  problem.correct_answer = correct;
  problem.rule = make_digit_sum_rule(modulus, 2, 1, correct);
  problem.generator = std::make_shared<PositionalGenerator>(std::move(probs));
  problem.rollout = problem.generator;
  return problem;
}

/// Skewed instance for the unbiasedness study: tokens lean toward 0, the
/// target answer needs the rarest residue.
Problem unbiasedness_problem() {
  TaskFamilySpec spec = digit_sum_spec(3, 6, 3, 2.5, 42);
  spec.skew_direction = "down";
  spec.fixed_correct_answer = 2;
  return make_problem(spec, 0);
}

/// Designated skewed task for the twist-variance chain. The target answer
/// needs a digit sum the down-skewed generator rarely produces, so most
/// p-mass drifts onto provably dead prefixes; resampling that prunes them is
/// where the twist variants separate. Digit probabilities stay above 1/64,
/// which keeps every incremental weight bounded and the variance estimates
/// tail-stable.
Problem chain_variance_problem() {
  TaskFamilySpec spec = digit_sum_spec(4, 6, 12, 1.1, 42);
  spec.skew_direction = "down";
  spec.fixed_correct_answer = 11;
  return make_problem(spec, 0);
}

/// Designated task for the step-correctness comparison. With the five-round
/// cap, resampling only ever happens at depths where every prefix still has a
/// correct completion, so the ground-truth step reward is identically one on
/// every prefix a round can see: the twist carries no likelihood information
/// at all, and its runs coincide with constant-twist runs exactly.
Problem likelihood_blind_problem() {
  TaskFamilySpec spec = digit_sum_spec(3, 10, 9, 1.2, 42);
  spec.skew_direction = "down";
  spec.fixed_correct_answer = 8;
  return make_problem(spec, 0);
}

std::vector<Problem> reference_suite() {
  std::vector<Problem> suite;
  suite.push_back(make_problem(digit_sum_spec(2, 4, 2, 0.0, 11), 0));
  suite.push_back(make_problem(digit_sum_spec(3, 4, 3, 0.8, 12), 0));
  suite.push_back(make_problem(digit_sum_spec(2, 6, 2, 1.5, 13), 0));
  suite.push_back(make_problem(branch_logic_spec("xor", 5, {}, 0.7, 14), 0));
  suite.push_back(make_problem(branch_logic_spec("and", 6, {1, 2, 3}, 0.9, 15), 0));
  suite.push_back(explicit_binary_problem("adversarial-binary-0.95", 0.95, 4, 2, 1));
  return suite;
}

// --- proposal builders (over trajectory leaves) ----------------------------

Eigen::VectorXd uniform_leaf_proposal(const Oracle& oracle) {
  const auto n = static_cast<Eigen::Index>(oracle.leaves().size());
  return Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
}

/// q proportional to p^beta; beta = 1 is the generator itself.
Eigen::VectorXd tempered_leaf_proposal(const Oracle& oracle, double beta) {
  const auto& leaves = oracle.leaves();
  Eigen::VectorXd q(static_cast<Eigen::Index>(leaves.size()));
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    q[static_cast<Eigen::Index>(i)] = std::exp(beta * oracle.log_prefix_prob(leaves[i]));
  }
  return q / q.sum();
}

Eigen::VectorXd sigma_leaf_proposal(const Oracle& oracle) {
  const auto& leaves = oracle.leaves();
  Eigen::VectorXd q(static_cast<Eigen::Index>(leaves.size()));
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    q[static_cast<Eigen::Index>(i)] = oracle.sigma(leaves[i]);
  }
  return q / q.sum();
}

/// The variance-optimal proposal q*(x_t | x_{1:t-1}) = sigma(x_{1:t}) / sigma(x_{1:t-1}).
class SigmaProposal final : public Generator {
 public:
  explicit SigmaProposal(std::shared_ptr<const Oracle> oracle) : oracle_(std::move(oracle)) {}
  int step_alphabet() const override { return oracle_->tree().alphabet(); }
  int horizon() const override { return oracle_->tree().horizon(); }
  Eigen::VectorXd step_probs(std::span<const int> prefix) const override {
    const auto node = oracle_->tree().node_of(prefix);
    const double parent = oracle_->sigma(node);
    const int a = step_alphabet();
    if (parent <= 0.0) return Eigen::VectorXd::Constant(a, 1.0 / a);  // dead, mass unused
    Eigen::VectorXd probs(a);
    for (int s = 0; s < a; ++s) probs[s] = oracle_->sigma(oracle_->tree().child(node, s)) / parent;
    return probs;
  }

 private:
  std::shared_ptr<const Oracle> oracle_;
};

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

/// Sample variance estimated on consecutive groups: mean of per-group
/// variances with its standard error across groups.
MeanSe grouped_variance(const Eigen::VectorXd& samples, int groups = 0) {
  if (groups <= 0) groups = std::max(40, static_cast<int>(samples.size()) / 2000);
  const int per = static_cast<int>(samples.size()) / groups;
  Eigen::VectorXd vars(groups);
  for (int g = 0; g < groups; ++g) {
    const auto block = samples.segment(g * per, per);
    const double mean = block.mean();
    vars[g] = (block.array() - mean).square().sum() / static_cast<double>(per - 1);
  }
  MeanSe out;
  out.mean = vars.mean();
  const double sd = std::sqrt((vars.array() - out.mean).square().sum() /
                              static_cast<double>(groups - 1));
  out.se = sd / std::sqrt(static_cast<double>(groups));
  return out;
}

/// bias beats 3 standard errors; zero-variance entries must match exactly.
bool within_3se(const EstimatorReport& report) {
  for (Eigen::Index a = 0; a < report.bias.size(); ++a) {
    if (report.se[a] == 0.0) {
      if (report.bias[a] != 0.0) return false;
    } else if (std::abs(report.bias[a]) > 3.0 * report.se[a]) {
      return false;
    }
  }
  return true;
}

}  // namespace

// --- checks ----------------------------------------------------------------

CheckResult check_variance_identity(std::uint64_t) {
  const auto start = Clock::now();
  CheckResult result;
  result.id = "answer-variance-identity";
  result.tolerance = 1e-10;

  double max_residual = 0.0;
  double max_sigma_proposal_variance = 0.0;
  int cases = 0;
  Json instances = Json::array();
  for (const Problem& problem : reference_suite()) {
    auto oracle = Oracle::build(problem);
    const std::vector<std::pair<std::string, Eigen::VectorXd>> proposals = {
        {"uniform", uniform_leaf_proposal(*oracle)},
        {"generator", tempered_leaf_proposal(*oracle, 1.0)},
        {"tempered-0.6", tempered_leaf_proposal(*oracle, 0.6)},
        {"sigma", sigma_leaf_proposal(*oracle)},
    };
    for (const auto& [name, q] : proposals) {
      for (const bool uniform_reward : {false, true}) {
        // the sigma-proportional proposal has no support outside the phi target
        if (uniform_reward && name == "sigma") continue;
        const VarianceIdentity terms = variance_identity_terms(*oracle, q, uniform_reward);
        const double residual = std::abs(terms.lhs - terms.rhs_variance - terms.c);
        max_residual = std::max(max_residual, residual);
        ++cases;
        if (name == "sigma" && !uniform_reward) {
          max_sigma_proposal_variance = std::max(max_sigma_proposal_variance,
                                                 std::abs(terms.rhs_variance));
        }
        instances.push_back({{"problem", problem.id},
                             {"proposal", name},
                             {"reward", uniform_reward ? "ones" : "phi"},
                             {"lhs", terms.lhs},
                             {"rhs_variance", terms.rhs_variance},
                             {"c", terms.c},
                             {"residual", residual}});
      }
    }
  }
  result.measured["cases"] = cases;
  result.measured["max_residual"] = max_residual;
  result.measured["max_sigma_proposal_variance"] = max_sigma_proposal_variance;
  result.measured["instances"] = instances;
  result.pass = max_residual <= result.tolerance && max_sigma_proposal_variance <= result.tolerance;
  result.runtime_ms = elapsed_ms(start);
  return result;
}

CheckResult check_optimal_target(std::uint64_t seed) {
  const auto start = Clock::now();
  CheckResult result;
  result.id = "optimal-prev-target";
  result.tolerance = 1e-10;

  std::vector<Problem> problems;
  problems.push_back(make_problem(digit_sum_spec(3, 4, 3, 0.8, 12), 0));
  problems.push_back(make_problem(branch_logic_spec("and", 6, {1, 2, 3}, 0.9, 15), 0));
  problems.push_back(make_problem(digit_sum_spec(2, 5, 2, 1.2, 16), 0));

  double max_recovery_gap = 0.0;
  double max_closed_form_gap = 0.0;
  int dominated = 0;
  int perturbations_total = 0;
  RandomStream rng = RandomStream(seed).derive("optimal-target");

  for (std::size_t pi = 0; pi < problems.size(); ++pi) {
    const Problem& problem = problems[pi];
    auto oracle = Oracle::build(problem);
    const PrefixTree& tree = oracle->tree();
    const int horizon = problem.horizon;
    SigmaProposal q_star(oracle);

    // Recovery: with the optimal proposal and pi_t = sigma_t, the optimal
    // previous target is sigma_{t-1}.
    for (int t : {horizon, std::max(1, horizon / 2)}) {
      const Eigen::VectorXd pi_t = oracle->sigma_level(t);
      const Eigen::VectorXd prev = optimal_prev_target(tree, pi_t, t, q_star);
      const Eigen::VectorXd expect = oracle->sigma_level(t - 1);
      max_recovery_gap = std::max(max_recovery_gap, (prev - expect).cwiseAbs().maxCoeff());
    }

    // q = p at the last step: the optimum is proportional to p * sqrt(V^p).
    {
      const int t = horizon;
      const Eigen::VectorXd prev =
          optimal_prev_target(tree, oracle->sigma_level(t), t, *problem.generator);
      Eigen::VectorXd expect(tree.level_size(t - 1));
      const std::int64_t begin = tree.level_offset(t - 1);
      for (std::int64_t m = 0; m < expect.size(); ++m) {
        expect[m] = std::exp(oracle->log_prefix_prob(begin + m)) *
                    std::sqrt(oracle->value(begin + m, Policy::p));
      }
      expect /= expect.sum();
      max_closed_form_gap = std::max(max_closed_form_gap, (prev - expect).cwiseAbs().maxCoeff());
    }

    // Dominance: the returned target beats random support-preserving
    // perturbations in incremental-weight variance.
    const int t = horizon;
    const Eigen::VectorXd pi_t = oracle->sigma_level(t);
    const Eigen::VectorXd opt = optimal_prev_target(tree, pi_t, t, *problem.generator);
    const double var_opt = incremental_weight_variance(tree, opt, pi_t, t, *problem.generator);
    RandomStream prng = rng.derive(static_cast<std::uint64_t>(pi));
    for (int k = 0; k < 100; ++k) {
      RandomStream draw = prng.derive(static_cast<std::uint64_t>(k));
      Eigen::VectorXd perturbed = opt;
      for (Eigen::Index m = 0; m < perturbed.size(); ++m) {
        if (perturbed[m] > 0.0) perturbed[m] *= std::exp(0.25 * draw.next_gauss());
      }
      perturbed /= perturbed.sum();
      const double var_pert =
          incremental_weight_variance(tree, perturbed, pi_t, t, *problem.generator);
      ++perturbations_total;
      if (var_opt <= var_pert + 1e-12) ++dominated;
    }
  }

  result.measured["max_recovery_gap"] = max_recovery_gap;
  result.measured["max_closed_form_gap"] = max_closed_form_gap;
  result.measured["perturbations"] = perturbations_total;
  result.measured["dominated"] = dominated;
  result.pass = max_recovery_gap <= result.tolerance &&
                max_closed_form_gap <= result.tolerance && dominated == perturbations_total;
  result.runtime_ms = elapsed_ms(start);
  return result;
}

CheckResult check_ground_truth_prm(std::uint64_t) {
  const auto start = Clock::now();
  CheckResult result;
  result.id = "ground-truth-prm";
  result.tolerance = 0.0;

  std::vector<Problem> problems;
  problems.push_back(make_problem(digit_sum_spec(3, 5, 3, 0.8, 17), 0));
  problems.push_back(make_problem(branch_logic_spec("and", 6, {1, 2, 3}, 0.9, 15), 0));
  {
    TaskFamilySpec spec = digit_sum_spec(2, 7, 2, 0.6, 18);
    spec.end_marker = true;
    problems.push_back(make_problem(spec, 0));
  }

  std::int64_t trajectories = 0;
  int mismatches = 0;
  for (const Problem& problem : problems) {
    auto oracle = Oracle::build(problem);
    for (std::int64_t leaf : oracle->leaves()) {
      const auto steps = oracle->tree().steps_of(leaf);
      const int phi = correctness(answer_of(problem, steps), problem);
      int agg_min = 1;
      int agg_prod = 1;
      for (std::size_t t = 1; t <= steps.size(); ++t) {
        const int r = oracle->prm(std::span<const int>(steps.data(), t));
        agg_min = std::min(agg_min, r);
        agg_prod *= r;
      }
      if (agg_min != phi || agg_prod != phi) ++mismatches;
      ++trajectories;
    }
  }
  result.measured["trajectories"] = trajectories;
  result.measured["mismatches"] = mismatches;
  result.pass = mismatches == 0;
  result.runtime_ms = elapsed_ms(start);
  return result;
}

CheckResult check_martingale(std::uint64_t) {
  const auto start = Clock::now();
  CheckResult result;
  result.id = "martingale-tower";
  result.tolerance = 1e-10;

  double max_tower = 0.0;
  double max_route_gap = 0.0;
  double max_marginal_gap = 0.0;
  std::int64_t prefixes = 0;

  for (const Problem& problem : reference_suite()) {
    auto oracle = Oracle::build(problem);
    const PrefixTree& tree = oracle->tree();

    // Independent value route: accumulate phi-weighted completion mass onto
    // every ancestor, leaf by leaf.
    std::vector<KahanSum> enumerated(static_cast<std::size_t>(tree.node_count()));
    for (std::int64_t leaf : oracle->leaves()) {
      const auto steps = tree.steps_of(leaf);
      if (correctness(answer_of(problem, steps), problem) != 1) continue;
      const double logp_leaf = oracle->log_prefix_prob(leaf);
      std::int64_t node = leaf;
      while (true) {
        enumerated[static_cast<std::size_t>(node)].add(
            std::exp(logp_leaf - oracle->log_prefix_prob(node)));
        if (node == 0) break;
        node = tree.parent(node);
      }
    }

    for (std::int64_t node = 0; node < tree.node_count(); ++node) {
      if (node != 0 && oracle->prefix_prob(node) == 0.0) continue;  // unreachable
      if (oracle->is_terminal(node)) {
        const auto steps = tree.steps_of(node);
        const double phi = correctness(answer_of(problem, steps), problem);
        max_route_gap = std::max(max_route_gap, std::abs(oracle->value(node) - phi));
        continue;
      }
      ++prefixes;
      const auto steps = tree.steps_of(node);
      const Eigen::VectorXd probs = problem.generator->step_probs(steps);
      KahanSum one_step;
      KahanSum child_sigma;
      for (int a = 0; a < tree.alphabet(); ++a) {
        one_step.add(probs[a] * oracle->value(tree.child(node, a)));
        child_sigma.add(oracle->sigma(tree.child(node, a)));
      }
      max_tower = std::max(max_tower, std::abs(one_step.value() - oracle->value(node)));
      max_route_gap = std::max(
          max_route_gap,
          std::abs(oracle->value(node) - enumerated[static_cast<std::size_t>(node)].value()));
      max_marginal_gap =
          std::max(max_marginal_gap, std::abs(child_sigma.value() - oracle->sigma(node)));
    }
    max_route_gap = std::max(max_route_gap, std::abs(oracle->z_sigma() - oracle->z_recursion()));
  }

  result.measured["prefixes"] = prefixes;
  result.measured["max_tower_residual"] = max_tower;
  result.measured["max_two_route_gap"] = max_route_gap;
  result.measured["max_marginal_consistency_gap"] = max_marginal_gap;
  result.pass = max_tower <= result.tolerance && max_route_gap <= result.tolerance &&
                max_marginal_gap <= result.tolerance;
  result.runtime_ms = elapsed_ms(start);
  return result;
}

CheckResult check_telescoping(std::uint64_t seed) {
  const auto start = Clock::now();
  CheckResult result;
  result.id = "telescoping";
  result.tolerance = 1e-9;

  std::vector<Problem> problems;
  problems.push_back(make_problem(digit_sum_spec(3, 6, 3, 1.0, 19), 0));
  problems.push_back(make_problem(branch_logic_spec("and", 6, {1, 2, 3}, 0.8, 15), 0));
  {
    TaskFamilySpec spec = digit_sum_spec(2, 8, 2, 0.9, 20);
    spec.end_marker = true;  // exercises the early-termination weight rule
    problems.push_back(make_problem(spec, 0));
  }

  TsmcConfig config;
  config.particles = 8;
  config.warmup_tokens = 1;
  config.max_resample_rounds = 5;

  int lineages = 0;
  double max_gap = 0.0;
  RandomStream rng = RandomStream(seed).derive("telescoping");
  int run_index = 0;
  while (lineages < 500) {
    for (const Problem& problem : problems) {
      auto oracle = Oracle::build(problem);
      const TwistModel twist(TwistKind::sqrt_value_exact, oracle);
      const TsmcRunResult run =
          run_tsmc(problem, config, twist, rng.derive(static_cast<std::uint64_t>(run_index++)));
      for (int i = 0; i < config.particles; ++i) {
        const double product = std::exp(run.lineage_log_product[i]);
        const double phi =
            correctness(*run.finals[static_cast<std::size_t>(i)].answer, problem);
        max_gap = std::max(max_gap, std::abs(product - phi));
        ++lineages;
      }
    }
  }

  result.measured["lineages"] = lineages;
  result.measured["max_gap"] = max_gap;
  result.pass = max_gap <= result.tolerance;
  result.runtime_ms = elapsed_ms(start);
  return result;
}

CheckResult check_unbiasedness(std::uint64_t seed) {
  const auto start = Clock::now();
  CheckResult result;
  result.id = "unbiasedness";
  result.tolerance = 3.0;  // standard errors

  const Problem problem = unbiasedness_problem();
  auto oracle = Oracle::build(problem);
  const Eigen::VectorXd truth = exact_answer_weights(*oracle);
  const int replications = 2000;

  TsmcConfig config;
  config.particles = 8;
  config.warmup_tokens = 1;
  config.max_resample_rounds = 5;

  const std::vector<std::pair<std::string, TwistKind>> kinds = {
      {"sqrt_value", TwistKind::sqrt_value_exact},
      {"value", TwistKind::value_exact},
      {"constant", TwistKind::constant},
  };

  bool pass = true;
  RandomStream rng = RandomStream(seed).derive("unbiasedness");
  Json per_twist = Json::array();
  for (const auto& [name, kind] : kinds) {
    const TwistModel twist(kind, oracle);
    std::vector<AnswerTally> tallies;
    tallies.reserve(replications);
    RandomStream twist_rng = rng.derive(name);
    for (int r = 0; r < replications; ++r) {
      const TsmcRunResult run =
          run_tsmc(problem, config, twist, twist_rng.derive(static_cast<std::uint64_t>(r)));
      tallies.push_back(unnormalized_answer_estimate(run, problem.answer_count()));
    }
    const EstimatorReport report = bias_variance_report(tallies, truth, problem.correct_answer);
    const bool ok = within_3se(report);
    pass = pass && ok;
    per_twist.push_back({{"twist", name},
                         {"pass", ok},
                         {"bias_correct", report.bias[problem.correct_answer]},
                         {"se_correct", report.se[problem.correct_answer]},
                         {"truth_correct", truth[problem.correct_answer]}});
  }

  result.measured["replications"] = replications;
  result.measured["per_twist"] = per_twist;
  result.pass = pass;
  result.runtime_ms = elapsed_ms(start);
  return result;
}

namespace {

Eigen::VectorXd normalizer_samples(const Problem& problem, const TsmcConfig& config,
                                   const TwistModel& twist, RandomStream rng, int replications) {
  Eigen::VectorXd z_hat(replications);
  for (int r = 0; r < replications; ++r) {
    const TsmcRunResult run =
        run_tsmc(problem, config, twist, rng.derive(static_cast<std::uint64_t>(r)));
    z_hat[r] = std::exp(run.log_z);
  }
  return z_hat;
}

}  // namespace

CheckResult check_variance_ordering(std::uint64_t seed) {
  const auto start = Clock::now();
  CheckResult result;
  result.id = "variance-ordering";
  result.tolerance = 3.0;  // standard errors

  TsmcConfig config;
  config.particles = 8;
  config.warmup_tokens = 1;
  config.max_resample_rounds = 5;

  RandomStream rng = RandomStream(seed).derive("variance");

  // Chain ordering sqrt(V) < V < constant on the dead-branch witness. Runs are
  // paired across twists through shared seeds.
  const Problem chain_problem = chain_variance_problem();
  auto chain_oracle = Oracle::build(chain_problem);
  const int chain_replications = 1000000;
  std::map<std::string, MeanSe> variances;
  for (const auto& [name, kind] :
       std::vector<std::pair<std::string, TwistKind>>{{"sqrt_value", TwistKind::sqrt_value_exact},
                                                      {"value", TwistKind::value_exact},
                                                      {"constant", TwistKind::constant}}) {
    const TwistModel twist(kind, chain_oracle);
    variances[name] = grouped_variance(
        normalizer_samples(chain_problem, config, twist, rng.derive("chain"), chain_replications));
  }
  auto separated = [](const MeanSe& lo, const MeanSe& hi) {
    const double gap = hi.mean - lo.mean;
    const double se = std::sqrt(lo.se * lo.se + hi.se * hi.se);
    return gap > 3.0 * se;
  };
  const bool sqrt_lt_value = separated(variances["sqrt_value"], variances["value"]);
  const bool value_lt_constant = separated(variances["value"], variances["constant"]);

  // Step-correctness comparison on the likelihood-blind witness, where the
  // ground-truth reward is 1 on every prefix resampling can reach. The runs
  // must coincide with constant-twist runs outcome for outcome; any deviation,
  // let alone an improvement, is a failure.
  const Problem blind_problem = likelihood_blind_problem();
  auto blind_oracle = Oracle::build(blind_problem);
  const int blind_replications = 20000;
  const Eigen::VectorXd z_step =
      normalizer_samples(blind_problem, config, TwistModel(TwistKind::step_correctness_exact, blind_oracle),
                         rng.derive("blind"), blind_replications);
  const Eigen::VectorXd z_const =
      normalizer_samples(blind_problem, config, TwistModel(TwistKind::constant, blind_problem),
                         rng.derive("blind"), blind_replications);
  const double max_run_gap = (z_step - z_const).cwiseAbs().maxCoeff();
  const MeanSe step_var = grouped_variance(z_step);
  const MeanSe const_var = grouped_variance(z_const);
  const bool step_not_better =
      max_run_gap == 0.0 && !separated(step_var, const_var);

  Json vars;
  for (const auto& [name, v] : variances) {
    vars[name] = {{"variance", v.mean}, {"se", v.se}};
  }
  result.measured["chain_task"] = chain_problem.id;
  result.measured["chain_replications"] = chain_replications;
  result.measured["variances"] = vars;
  result.measured["sqrt_lt_value"] = sqrt_lt_value;
  result.measured["value_lt_constant"] = value_lt_constant;
  result.measured["blind_task"] = blind_problem.id;
  result.measured["blind_replications"] = blind_replications;
  result.measured["step_variance"] = step_var.mean;
  result.measured["constant_variance_blind"] = const_var.mean;
  result.measured["step_constant_max_run_gap"] = max_run_gap;
  result.measured["step_not_better_than_constant"] = step_not_better;
  result.pass = sqrt_lt_value && value_lt_constant && step_not_better;
  result.runtime_ms = elapsed_ms(start);
  return result;
}

CheckResult check_ctl_gradient(std::uint64_t seed) {
  const auto start = Clock::now();
  CheckResult result;
  result.id = "ctl-gradient";
  result.tolerance = 1e-4;

  std::vector<Problem> problems;
  problems.push_back(make_problem(digit_sum_spec(3, 4, 3, 0.9, 23), 0));
  problems.push_back(make_problem(digit_sum_spec(2, 5, 2, 1.1, 24), 0));
  problems.push_back(make_problem(branch_logic_spec("xor", 4, {}, 0.8, 25), 0));

  RandomStream rng = RandomStream(seed).derive("ctl");
  double max_rel_error = 0.0;
  double stationary_norm = 0.0;
  Json cases = Json::array();

  auto fd_check = [&](const Problem& problem, const Oracle& oracle, ValueModel& model,
                      const std::string& label) {
    const Eigen::VectorXd grad = ctl_gradient_exact(model, oracle);
    Eigen::VectorXd fd(grad.size());
    const double h = 1e-5;
    for (Eigen::Index i = 0; i < grad.size(); ++i) {
      const double keep = model.params()[i];
      model.params()[i] = keep + h;
      const double up = ctl_objective_exact(model, oracle);
      model.params()[i] = keep - h;
      const double down = ctl_objective_exact(model, oracle);
      model.params()[i] = keep;
      fd[i] = (up - down) / (2.0 * h);
    }
    const double scale = std::max(fd.cwiseAbs().maxCoeff(), 1e-8);
    const double rel = (grad - fd).cwiseAbs().maxCoeff() / scale;
    max_rel_error = std::max(max_rel_error, rel);
    cases.push_back({{"case", label}, {"rel_error", rel}, {"grad_norm", grad.cwiseAbs().maxCoeff()}});
    (void)problem;
  };

  for (std::size_t pi = 0; pi < problems.size(); ++pi) {
    const Problem& problem = problems[pi];
    auto oracle = Oracle::build(problem);
    const int states = problem.rule->state_count();

    // Stationary instance: interior levels carry the exact values; terminal
    // logits saturate toward phi as far as the link allows.
    {
      ValueModel model(problem.horizon, states);
      const PrefixTree& tree = oracle->tree();
      for (int t = 1; t <= problem.horizon; ++t) {
        const std::int64_t begin = tree.level_offset(t);
        for (std::int64_t j = 0; j < tree.level_size(t); ++j) {
          const auto steps = tree.steps_of(begin + j);
          const int s = state_of(problem, steps);
          const double v = oracle->value(begin + j);
          const double clamped = std::min(1.0 - 1e-9, std::max(1e-9, v));
          model.params()[model.index(t, s)] = std::log(clamped / (1.0 - clamped));
        }
      }
      const double norm = ctl_gradient_exact(model, *oracle).cwiseAbs().maxCoeff();
      stationary_norm = std::max(stationary_norm, norm);
    }

    // Random and near-boundary parameter draws.
    RandomStream prng = rng.derive(static_cast<std::uint64_t>(pi));
    {
      ValueModel model(problem.horizon, states);
      for (Eigen::Index i = 0; i < model.params().size(); ++i) {
        model.params()[i] = 2.0 * prng.next_double() - 1.0;
      }
      fd_check(problem, *oracle, model, problem.id + "/random");
    }
    {
      ValueModel model(problem.horizon, states);
      for (Eigen::Index i = 0; i < model.params().size(); ++i) {
        model.params()[i] = prng.next_double() > 0.5 ? 4.0 : -4.0;
      }
      fd_check(problem, *oracle, model, problem.id + "/boundary");
    }
  }

  result.measured["max_rel_error"] = max_rel_error;
  result.measured["stationary_gradient_norm"] = stationary_norm;
  result.measured["cases"] = cases;
  result.pass = max_rel_error <= result.tolerance && stationary_norm <= 1e-4;
  result.runtime_ms = elapsed_ms(start);
  return result;
}

std::vector<CheckResult> run_all_checks(std::uint64_t master_seed) {
  RandomStream rng(master_seed);
  std::vector<CheckResult> checks;
  checks.push_back(check_variance_identity(rng.derive("variance-identity").key()));
  checks.push_back(check_optimal_target(rng.derive("optimal-target").key()));
  checks.push_back(check_ground_truth_prm(rng.derive("ground-truth-prm").key()));
  checks.push_back(check_martingale(rng.derive("martingale").key()));
  checks.push_back(check_telescoping(rng.derive("telescoping").key()));
  checks.push_back(check_unbiasedness(rng.derive("unbiasedness").key()));
  checks.push_back(check_variance_ordering(rng.derive("variance").key()));
  checks.push_back(check_ctl_gradient(rng.derive("ctl").key()));
  return checks;
}

void write_ledger(const std::filesystem::path& path, const std::vector<CheckResult>& checks) {
  std::vector<Json> records;
  records.reserve(checks.size());
  for (const CheckResult& check : checks) {
    Json j;
    j["id"] = check.id;
    j["status"] = check.pass ? "pass" : "fail";
    j["tolerance"] = check.tolerance;
    j["measured"] = check.measured;
    records.push_back(std::move(j));
  }
  write_jsonl(path, records);
}

std::string ledger_table(const std::vector<CheckResult>& checks) {
  std::ostringstream out;
  out << "check                     status   runtime\n";
  for (const CheckResult& check : checks) {
    out << check.id;
    for (std::size_t i = check.id.size(); i < 26; ++i) out << ' ';
    out << (check.pass ? "pass" : "FAIL") << "     " << format_double(check.runtime_ms) << " ms\n";
  }
  return out.str();
}

bool all_passed(const std::vector<CheckResult>& checks) {
  for (const CheckResult& check : checks) {
    if (!check.pass) return false;
  }
  return true;
}

}  // namespace tsmc
