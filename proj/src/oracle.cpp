#include "tsmc/oracle.hpp"

#include <algorithm>
#include <cmath>

namespace tsmc {

PrefixTree::PrefixTree(int alphabet, int horizon) : alphabet_(alphabet), horizon_(horizon) {
  offsets_.resize(static_cast<std::size_t>(horizon) + 2);
  offsets_[0] = 0;
  std::int64_t level = 1;
  for (int d = 0; d <= horizon; ++d) {
    offsets_[static_cast<std::size_t>(d) + 1] = offsets_[static_cast<std::size_t>(d)] + level;
    level *= alphabet;
  }
}

int PrefixTree::depth(std::int64_t node) const {
  const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), node);
  return static_cast<int>(it - offsets_.begin()) - 1;
}

std::int64_t PrefixTree::node_of(std::span<const int> steps) const {
  std::int64_t node = 0;
  for (int s : steps) node = child(node, s);
  return node;
}

std::vector<int> PrefixTree::steps_of(std::int64_t node) const {
  std::vector<int> steps;
  while (node != 0) {
    steps.push_back(last_step(node));
    node = parent(node);
  }
  std::reverse(steps.begin(), steps.end());
  return steps;
}

Oracle::Oracle(const Problem& problem, PrefixTree tree) : problem_(problem), tree_(std::move(tree)) {}

bool Oracle::is_terminal(std::int64_t node) const {
  if (node == 0) return problem_.horizon == 0;
  const int d = tree_.depth(node);
  return d == problem_.horizon ||
         (problem_.has_end_marker() && tree_.last_step(node) == problem_.end_step);
}

namespace {

// Walk every reachable node top-down, carrying the step sequence along;
// fn(node, steps, terminal). Children of terminal nodes are never visited.
template <typename Fn>
void visit_reachable(const Problem& problem, const PrefixTree& tree, Fn&& fn) {
  std::vector<int> steps;
  auto recurse = [&](auto&& self, std::int64_t node) -> void {
    const int depth = static_cast<int>(steps.size());
    const bool terminal = depth == problem.horizon ||
                          (!steps.empty() && problem.has_end_marker() &&
                           steps.back() == problem.end_step);
    fn(node, std::span<const int>(steps), terminal);
    if (terminal) return;
    for (int a = 0; a < tree.alphabet(); ++a) {
      steps.push_back(a);
      self(self, tree.child(node, a));
      steps.pop_back();
    }
  };
  recurse(recurse, 0);
}

// status: 0 unreachable, 1 interior, 2 terminal. phi_at_terminal seeds the
// recursion; interior nodes average their children under the policy.
Eigen::VectorXd backward_values(const Problem& problem, const PrefixTree& tree,
                                const std::vector<char>& status,
                                const Eigen::VectorXd& phi_at_terminal, const Generator& gen) {
  Eigen::VectorXd values = phi_at_terminal;
  for (int d = problem.horizon - 1; d >= 0; --d) {
    const std::int64_t begin = tree.level_offset(d);
    const std::int64_t end = begin + tree.level_size(d);
    for (std::int64_t node = begin; node < end; ++node) {
      if (status[static_cast<std::size_t>(node)] != 1) continue;
      const auto steps = tree.steps_of(node);
      const Eigen::VectorXd probs = gen.step_probs(steps);
      KahanSum acc;
      for (int a = 0; a < tree.alphabet(); ++a) acc.add(probs[a] * values[tree.child(node, a)]);
      values[node] = acc.value();
    }
  }
  return values;
}

}  // namespace

std::shared_ptr<const Oracle> Oracle::build(const Problem& problem, std::int64_t budget) {
  const int alphabet = problem.step_alphabet();
  double leaf_bound = 1.0;
  for (int t = 0; t < problem.horizon; ++t) leaf_bound *= alphabet;
  if (leaf_bound > static_cast<double>(budget)) {
    fail(ErrorCode::BudgetExceeded, "trajectory space " + std::to_string(leaf_bound) +
                                        " exceeds budget " + std::to_string(budget));
  }

  auto oracle = std::shared_ptr<Oracle>(new Oracle(problem, PrefixTree(alphabet, problem.horizon)));
  const PrefixTree& tree = oracle->tree_;
  const std::int64_t n = tree.node_count();
  const double neg_inf = -std::numeric_limits<double>::infinity();

  oracle->values_p_ = Eigen::VectorXd::Zero(n);
  oracle->logp_ = Eigen::VectorXd::Constant(n, neg_inf);
  oracle->sigma_ = Eigen::VectorXd::Zero(n);
  oracle->logp_[0] = 0.0;

  // Forward pass: prefix log-probabilities and the leaf set.
  visit_reachable(problem, tree, [&](std::int64_t node, std::span<const int> steps, bool terminal) {
    if (terminal) {
      oracle->leaves_.push_back(node);
      return;
    }
    const Eigen::VectorXd probs = problem.generator->step_probs(steps);
    for (int a = 0; a < alphabet; ++a) {
      const std::int64_t c = tree.child(node, a);
      oracle->logp_[c] = probs[a] > 0.0 ? oracle->logp_[node] + std::log(probs[a]) : neg_inf;
    }
  });

  // Backward value recursion, per policy. Unreachable nodes keep value 0.
  std::vector<char> status(static_cast<std::size_t>(n), 0);  // 0 unreachable, 1 interior, 2 terminal
  Eigen::VectorXd phi_at_terminal = Eigen::VectorXd::Zero(n);
  visit_reachable(problem, tree, [&](std::int64_t node, std::span<const int> steps, bool terminal) {
    status[static_cast<std::size_t>(node)] = terminal ? 2 : 1;
    if (terminal) phi_at_terminal[node] = correctness(answer_of(problem, steps), problem);
  });
  oracle->values_p_ = backward_values(problem, tree, status, phi_at_terminal, *problem.generator);
  if (problem.rollout == problem.generator) {
    oracle->values_mu_ = oracle->values_p_;
  } else {
    oracle->values_mu_ = backward_values(problem, tree, status, phi_at_terminal, *problem.rollout);
  }

  // Exhaustive partition sum, the route independent of the recursion.
  KahanSum z;
  for (std::int64_t leaf : oracle->leaves_) {
    if (oracle->logp_[leaf] == neg_inf) continue;
    const auto steps = tree.steps_of(leaf);
    if (correctness(answer_of(problem, steps), problem) == 1) {
      z.add(std::exp(oracle->logp_[leaf]));
    }
  }
  oracle->z_enum_ = z.value();
  if (oracle->z_enum_ <= 0.0) {
    fail(ErrorCode::DegenerateTarget, "no correct trajectory for problem " + problem.id);
  }

  for (std::int64_t node = 0; node < n; ++node) {
    oracle->sigma_[node] = oracle->logp_[node] == neg_inf
                               ? 0.0
                               : std::exp(oracle->logp_[node]) * oracle->values_p_[node] /
                                     oracle->z_enum_;
  }
  return oracle;
}

std::vector<Trajectory> enumerate_trajectories(const Problem& problem, std::int64_t budget) {
  auto oracle = Oracle::build(problem, budget);
  const PrefixTree& tree = oracle->tree();
  std::vector<Trajectory> all;
  all.reserve(oracle->leaves().size());
  for (std::int64_t leaf : oracle->leaves()) {
    if (oracle->log_prefix_prob(leaf) == -std::numeric_limits<double>::infinity()) continue;
    Trajectory traj;
    traj.problem_id = problem.id;
    traj.steps = tree.steps_of(leaf);
    traj.step_logprobs.resize(traj.steps.size());
    std::int64_t node = leaf;
    for (int i = traj.length() - 1; i >= 0; --i) {
      const std::int64_t par = tree.parent(node);
      traj.step_logprobs[static_cast<std::size_t>(i)] =
          oracle->log_prefix_prob(node) - oracle->log_prefix_prob(par);
      node = par;
    }
    finalize(problem, traj);
    all.push_back(std::move(traj));
  }
  return all;
}

double exact_partition(const Oracle& oracle) { return oracle.z_sigma(); }

double exact_value(const Oracle& oracle, std::span<const int> prefix, Policy policy) {
  return oracle.value(prefix, policy);
}

Eigen::VectorXd exact_values(const Problem& problem, const Generator& policy,
                             std::int64_t budget) {
  const int alphabet = problem.step_alphabet();
  if (policy.step_alphabet() != alphabet) {
    fail(ErrorCode::ConfigError, "policy alphabet does not match the problem");
  }
  double leaf_bound = 1.0;
  for (int t = 0; t < problem.horizon; ++t) leaf_bound *= alphabet;
  if (leaf_bound > static_cast<double>(budget)) {
    fail(ErrorCode::BudgetExceeded, "trajectory space exceeds budget");
  }
  const PrefixTree tree(alphabet, problem.horizon);
  std::vector<char> status(static_cast<std::size_t>(tree.node_count()), 0);
  Eigen::VectorXd phi = Eigen::VectorXd::Zero(tree.node_count());
  visit_reachable(problem, tree, [&](std::int64_t node, std::span<const int> steps, bool terminal) {
    status[static_cast<std::size_t>(node)] = terminal ? 2 : 1;
    if (terminal) phi[node] = correctness(answer_of(problem, steps), problem);
  });
  return backward_values(problem, tree, status, phi, policy);
}

double exact_sigma_marginal(const Oracle& oracle, std::span<const int> prefix) {
  return oracle.sigma(prefix);
}

int ground_truth_prm(const Oracle& oracle, std::span<const int> prefix) {
  return oracle.prm(prefix);
}

Eigen::VectorXd exact_answer_weights(const Oracle& oracle, bool uniform_reward) {
  const Problem& problem = oracle.problem();
  Eigen::VectorXd weights = Eigen::VectorXd::Zero(problem.answer_count());
  std::vector<KahanSum> acc(static_cast<std::size_t>(problem.answer_count()));
  for (std::int64_t leaf : oracle.leaves()) {
    const double p = oracle.prefix_prob(leaf);
    if (p == 0.0) continue;
    const auto steps = oracle.tree().steps_of(leaf);
    const Answer a = answer_of(problem, steps);
    const double r = uniform_reward ? 1.0 : correctness(a, problem);
    acc[static_cast<std::size_t>(a)].add(p * r);
  }
  for (int a = 0; a < problem.answer_count(); ++a) weights[a] = acc[static_cast<std::size_t>(a)].value();
  return weights;
}

VarianceIdentity variance_identity_terms(const Oracle& oracle, const Eigen::VectorXd& q_leaf,
                                         bool uniform_reward) {
  const Problem& problem = oracle.problem();
  const auto& leaves = oracle.leaves();
  if (q_leaf.size() != static_cast<Eigen::Index>(leaves.size())) {
    fail(ErrorCode::LengthMismatch, "proposal has " + std::to_string(q_leaf.size()) +
                                        " entries for " + std::to_string(leaves.size()) +
                                        " trajectories");
  }

  const int answers = problem.answer_count();
  std::vector<Answer> leaf_answer(leaves.size());
  Eigen::VectorXd sigma_tilde(q_leaf.size());
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const auto steps = oracle.tree().steps_of(leaves[i]);
    leaf_answer[i] = answer_of(problem, steps);
    const double p = oracle.prefix_prob(leaves[i]);
    const double reward = uniform_reward ? 1.0 : correctness(leaf_answer[i], problem);
    sigma_tilde[static_cast<Eigen::Index>(i)] = p * reward;
    if (sigma_tilde[static_cast<Eigen::Index>(i)] > 0.0 && q_leaf[static_cast<Eigen::Index>(i)] <= 0.0) {
      fail(ErrorCode::SupportViolation, "proposal assigns zero mass to a target trajectory");
    }
  }

  VarianceIdentity out;

  // lhs: per-answer variances of sigma~ 1_a / q under q.
  KahanSum lhs;
  for (int a = 0; a < answers; ++a) {
    KahanSum m1;
    KahanSum m2;
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      if (leaf_answer[i] != a || q_leaf[static_cast<Eigen::Index>(i)] <= 0.0) continue;
      const double ratio = sigma_tilde[static_cast<Eigen::Index>(i)] / q_leaf[static_cast<Eigen::Index>(i)];
      m1.add(q_leaf[static_cast<Eigen::Index>(i)] * ratio);
      m2.add(q_leaf[static_cast<Eigen::Index>(i)] * ratio * ratio);
    }
    lhs.add(m2.value() - m1.value() * m1.value());
  }
  out.lhs = lhs.value();

  // rhs: variance of sigma~ / q under q.
  {
    KahanSum m1;
    KahanSum m2;
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      if (q_leaf[static_cast<Eigen::Index>(i)] <= 0.0) continue;
      const double ratio = sigma_tilde[static_cast<Eigen::Index>(i)] / q_leaf[static_cast<Eigen::Index>(i)];
      m1.add(q_leaf[static_cast<Eigen::Index>(i)] * ratio);
      m2.add(q_leaf[static_cast<Eigen::Index>(i)] * ratio * ratio);
    }
    out.rhs_variance = m2.value() - m1.value() * m1.value();
  }

  // C: from the unnormalized answer weights themselves.
  {
    KahanSum total;
    std::vector<KahanSum> per_answer(static_cast<std::size_t>(answers));
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      total.add(sigma_tilde[static_cast<Eigen::Index>(i)]);
      per_answer[static_cast<std::size_t>(leaf_answer[i])].add(sigma_tilde[static_cast<Eigen::Index>(i)]);
    }
    KahanSum wa2;
    for (int a = 0; a < answers; ++a) wa2.add(per_answer[static_cast<std::size_t>(a)].value() *
                                              per_answer[static_cast<std::size_t>(a)].value());
    out.c = total.value() * total.value() - wa2.value();
  }
  return out;
}

Eigen::VectorXd optimal_prev_target(const PrefixTree& tree, const Eigen::VectorXd& pi_t, int t,
                                    const Generator& q) {
  if (t < 1 || t > tree.horizon()) fail(ErrorCode::ConfigError, "invalid level " + std::to_string(t));
  if (pi_t.size() != tree.level_size(t)) {
    fail(ErrorCode::LengthMismatch, "pi_t has wrong length for level " + std::to_string(t));
  }
  const std::int64_t prev_begin = tree.level_offset(t - 1);
  const std::int64_t prev_size = tree.level_size(t - 1);
  const std::int64_t cur_begin = tree.level_offset(t);

  Eigen::VectorXd out(prev_size);
  for (std::int64_t m = 0; m < prev_size; ++m) {
    const std::int64_t node = prev_begin + m;
    const auto steps = tree.steps_of(node);
    const Eigen::VectorXd probs = q.step_probs(steps);
    KahanSum inner;
    for (int a = 0; a < tree.alphabet(); ++a) {
      const double pi = pi_t[tree.child(node, a) - cur_begin];
      if (pi == 0.0) continue;
      if (probs[a] <= 0.0) {
        fail(ErrorCode::SupportViolation, "proposal assigns zero mass under a live target");
      }
      inner.add(pi * pi / probs[a]);
    }
    out[m] = std::sqrt(inner.value());
  }
  const double total = out.sum();
  if (total <= 0.0) fail(ErrorCode::DegenerateTarget, "intermediate target has no mass");
  return out / total;
}

double incremental_weight_variance(const PrefixTree& tree, const Eigen::VectorXd& pi_prev,
                                   const Eigen::VectorXd& pi_t, int t, const Generator& q) {
  const std::int64_t prev_begin = tree.level_offset(t - 1);
  const std::int64_t prev_size = tree.level_size(t - 1);
  const std::int64_t cur_begin = tree.level_offset(t);
  KahanSum second_moment;
  for (std::int64_t m = 0; m < prev_size; ++m) {
    const std::int64_t node = prev_begin + m;
    const auto steps = tree.steps_of(node);
    const Eigen::VectorXd probs = q.step_probs(steps);
    for (int a = 0; a < tree.alphabet(); ++a) {
      const double pi = pi_t[tree.child(node, a) - cur_begin];
      if (pi == 0.0) continue;
      if (probs[a] <= 0.0 || pi_prev[m] <= 0.0) {
        return std::numeric_limits<double>::infinity();
      }
      second_moment.add(pi * pi / (probs[a] * pi_prev[m]));
    }
  }
  return second_moment.value() - 1.0;
}

}  // namespace tsmc
