#ifndef TSMC_ORACLE_HPP
#define TSMC_ORACLE_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "tsmc/task.hpp"

namespace tsmc {

/// Compensated (Neumaier) accumulator. Oracle sums carry 1e-10 tolerances, so
/// plain left-to-right addition is not good enough on the larger instances.
class KahanSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// Complete K-ary prefix tree over step sequences up to a fixed horizon.
/// Nodes of equal depth are contiguous, so per-depth quantities are plain
/// vector segments. Node 0 is the empty prefix.
class PrefixTree {
 public:
  PrefixTree(int alphabet, int horizon);

  int alphabet() const { return alphabet_; }
  int horizon() const { return horizon_; }
  std::int64_t node_count() const { return offsets_.back(); }

  std::int64_t child(std::int64_t node, int step) const {
    return node * alphabet_ + step + 1;
  }
  std::int64_t parent(std::int64_t node) const { return (node - 1) / alphabet_; }
  int last_step(std::int64_t node) const {
    return static_cast<int>((node - 1) % alphabet_);
  }

  std::int64_t level_offset(int depth) const { return offsets_[static_cast<std::size_t>(depth)]; }
  std::int64_t level_size(int depth) const {
    return offsets_[static_cast<std::size_t>(depth) + 1] - offsets_[static_cast<std::size_t>(depth)];
  }
  int depth(std::int64_t node) const;

  std::int64_t node_of(std::span<const int> steps) const;
  std::vector<int> steps_of(std::int64_t node) const;

 private:
  int alphabet_;
  int horizon_;
  std::vector<std::int64_t> offsets_;  // level start indices, length horizon+2
};

enum class Policy { p, mu };

/// Exact target quantities for one enumerable problem: partition function,
/// value functions under p and mu, target marginals, and ground-truth step
/// correctness. Built once by backward recursion, then immutable; the
/// exhaustive-enumeration partition sum is kept alongside the recursion value
/// so the two routes can be compared.
class Oracle {
 public:
  static std::shared_ptr<const Oracle> build(const Problem& problem,
                                             std::int64_t budget = 1'000'000);

  const Problem& problem() const { return problem_; }
  const PrefixTree& tree() const { return tree_; }

  /// Z^sigma via exhaustive summation (the defining route).
  double z_sigma() const { return z_enum_; }
  /// Z^sigma as the root of the backward value recursion (independent route).
  double z_recursion() const { return values_p_[0]; }

  double value(std::int64_t node, Policy policy = Policy::p) const {
    return policy == Policy::p ? values_p_[node] : values_mu_[node];
  }
  double value(std::span<const int> steps, Policy policy = Policy::p) const {
    return value(tree_.node_of(steps), policy);
  }

  /// sigma(x_{1:t}) = p(x_{1:t}) V^p(x_{1:t}) / Z.
  double sigma(std::int64_t node) const { return sigma_[node]; }
  double sigma(std::span<const int> steps) const { return sigma_[tree_.node_of(steps)]; }

  double log_prefix_prob(std::int64_t node) const { return logp_[node]; }
  double prefix_prob(std::int64_t node) const { return std::exp(logp_[node]); }

  /// Ground-truth process reward: 1 iff a correct completion of the prefix exists.
  int prm(std::int64_t node) const { return sigma_[node] > 0.0 ? 1 : 0; }
  int prm(std::span<const int> steps) const { return prm(tree_.node_of(steps)); }

  bool is_terminal(std::int64_t node) const;

  /// All complete trajectories (tree leaves), in node order.
  const std::vector<std::int64_t>& leaves() const { return leaves_; }

  /// sigma over a whole depth level, as a contiguous segment.
  Eigen::VectorXd sigma_level(int depth) const {
    return sigma_.segment(tree_.level_offset(depth), tree_.level_size(depth));
  }

  const Eigen::VectorXd& values(Policy policy = Policy::p) const {
    return policy == Policy::p ? values_p_ : values_mu_;
  }

 private:
  Oracle(const Problem& problem, PrefixTree tree);

  Problem problem_;
  PrefixTree tree_;
  Eigen::VectorXd values_p_;
  Eigen::VectorXd values_mu_;
  Eigen::VectorXd logp_;
  Eigen::VectorXd sigma_;
  std::vector<std::int64_t> leaves_;
  double z_enum_ = 0.0;
};

/// All K^T complete trajectories with exact log-probabilities.
/// BudgetExceeded when the trajectory space is too large.
std::vector<Trajectory> enumerate_trajectories(const Problem& problem,
                                               std::int64_t budget = 1'000'000);

/// Z^sigma by exhaustive sum. DegenerateTarget when no correct trajectory exists
/// (enforced at Oracle::build already; re-exposed here as the named operation).
double exact_partition(const Oracle& oracle);

double exact_value(const Oracle& oracle, std::span<const int> prefix, Policy policy = Policy::p);
double exact_sigma_marginal(const Oracle& oracle, std::span<const int> prefix);

/// Node-indexed value table under an arbitrary policy, by the same backward
/// recursion the oracle uses for p and mu. The policy only reweights
/// completions; reachability and terminal correctness stay the problem's.
Eigen::VectorXd exact_values(const Problem& problem, const Generator& policy,
                             std::int64_t budget = 1'000'000);
int ground_truth_prm(const Oracle& oracle, std::span<const int> prefix);

/// w(a) = sum over trajectories of p * r * 1(Ans = a), indexed by answer.
/// r is phi by default; pass uniform_reward = true for the r == 1 surrogate.
Eigen::VectorXd exact_answer_weights(const Oracle& oracle, bool uniform_reward = false);

struct VarianceIdentity {
  double lhs = 0.0;           // sum over answers of Var_q[sigma~ 1(Ans=a) / q]
  double rhs_variance = 0.0;  // Var_q[sigma~ / q]
  double c = 0.0;             // (sum sigma~)^2 - sum_a (sum sigma~ 1_a)^2
};

/// The three terms of the answer-weight variance identity, each accumulated
/// through its own expectation so the identity is verified rather than
/// arranged. `q_leaf` aligns with oracle.leaves() and must be a distribution
/// positive wherever sigma~ > 0 (SupportViolation otherwise). With the phi
/// reward all answer mass sits on one atom and C degenerates to zero; the
/// r == 1 surrogate spreads sigma~ across answers and makes C nontrivial.
VarianceIdentity variance_identity_terms(const Oracle& oracle, const Eigen::VectorXd& q_leaf,
                                         bool uniform_reward = false);

/// Variance-minimizing previous-step target for a given intermediate target.
/// `pi_t` is a distribution over depth-t nodes (contiguous level order);
/// returns the normalized distribution over depth-(t-1) nodes proportional to
/// sqrt(sum_step pi_t(child)^2 / q(step | prefix)).
Eigen::VectorXd optimal_prev_target(const PrefixTree& tree, const Eigen::VectorXd& pi_t, int t,
                                    const Generator& q);

/// Variance of the incremental importance weight when moving from pi_prev to
/// pi_t with proposal q; the quantity optimal_prev_target minimizes.
double incremental_weight_variance(const PrefixTree& tree, const Eigen::VectorXd& pi_prev,
                                   const Eigen::VectorXd& pi_t, int t, const Generator& q);

}  // namespace tsmc

#endif
