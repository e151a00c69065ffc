#ifndef TSMC_TWIST_HPP
#define TSMC_TWIST_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "tsmc/oracle.hpp"
#include "tsmc/random.hpp"
#include "tsmc/task.hpp"

namespace tsmc {

/// Nonnegative prefix-value source shared by twists, scorers and beam search.
class ValueFn {
 public:
  virtual ~ValueFn() = default;
  virtual double value(const Problem& problem, std::span<const int> prefix) const = 0;
};

class ExactValueFn final : public ValueFn {
 public:
  ExactValueFn(std::shared_ptr<const Oracle> oracle, Policy policy = Policy::p)
      : oracle_(std::move(oracle)), policy_(policy) {}
  double value(const Problem&, std::span<const int> prefix) const override {
    return oracle_->value(prefix, policy_);
  }

 private:
  std::shared_ptr<const Oracle> oracle_;
  Policy policy_;
};

/// Multiplicative log-normal corruption of another value source. The noise is
/// a pure function of (seed, problem, prefix), so paired-seed comparisons see
/// the same corrupted landscape.
class NoisyValueFn final : public ValueFn {
 public:
  NoisyValueFn(std::shared_ptr<const ValueFn> base, double noise_sigma, std::uint64_t seed)
      : base_(std::move(base)), sigma_(noise_sigma), seed_(seed) {}
  double value(const Problem& problem, std::span<const int> prefix) const override;

 private:
  std::shared_ptr<const ValueFn> base_;
  double sigma_;
  std::uint64_t seed_;
};

/// Tabular value model over (step index, task state) with a logistic link, so
/// outputs live strictly inside (0,1). theta = 0 initializes V to 0.5.
class ValueModel final : public ValueFn {
 public:
  ValueModel(int horizon, int state_count)
      : horizon_(horizon),
        state_count_(state_count),
        theta_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(horizon + 1) * state_count)) {}

  double value(const Problem& problem, std::span<const int> prefix) const override {
    return value_at(static_cast<int>(prefix.size()), state_of(problem, prefix));
  }
  double value_at(int t, int state) const { return sigmoid(theta_[index(t, state)]); }

  /// Logistic link clamped to the open unit interval: extreme parameters must
  /// not round to an exact 0 or 1, or downstream log-weights blow up.
  static double sigmoid(double z) {
    const double v = 1.0 / (1.0 + std::exp(-z));
    return std::clamp(v, std::numeric_limits<double>::min(), 1.0 - 1e-16);
  }

  Eigen::Index index(int t, int state) const {
    return static_cast<Eigen::Index>(t) * state_count_ + state;
  }
  int horizon() const { return horizon_; }
  int state_count() const { return state_count_; }

  const Eigen::VectorXd& params() const { return theta_; }
  Eigen::VectorXd& params() { return theta_; }

 private:
  int horizon_;
  int state_count_;
  Eigen::VectorXd theta_;
};

enum class TwistKind {
  constant,                 // psi == 1; plain importance sampling
  sqrt_value_exact,         // psi = sqrt(V^p)
  value_exact,              // psi = V^p
  step_correctness_exact,   // psi = 1(sigma > 0)
  value_mismatched_policy,  // psi = sqrt(V^mu)
  sqrt_value_learned,       // psi = sqrt(V^theta)
};

/// Problem-bound twist psi_t plus the terminal score: phi for oracle-backed
/// kinds, V^theta(x_{1:T}) in learned mode. psi_0 is identically 1.
class TwistModel {
 public:
  TwistModel(TwistKind kind, std::shared_ptr<const Oracle> oracle);
  TwistModel(TwistKind kind, const Problem& problem, std::shared_ptr<const ValueFn> values);
  /// The constant twist needs no backing model at all.
  TwistModel(TwistKind kind, const Problem& problem);

  TwistKind kind() const { return kind_; }
  bool learned() const { return kind_ == TwistKind::sqrt_value_learned; }
  const Problem& problem() const { return *problem_; }

  double eval(std::span<const int> prefix) const;
  double log_eval(std::span<const int> prefix) const;

  /// log of the final-step numerator for a complete trajectory.
  double terminal_log_score(const Trajectory& traj) const;

 private:
  TwistKind kind_;
  const Problem* problem_;
  std::shared_ptr<const Oracle> oracle_;
  std::shared_ptr<const ValueFn> values_;
};

/// One extension step's importance weight: psi_t / psi_{t-1} while generation
/// continues, score_T / psi_{T-1} at termination. ZeroAncestorTwist when the
/// ancestor twist is zero: a zero-twist particle is killed by resampling, so a
/// zero ancestor means the caller's bookkeeping is broken, and flooring it
/// would hide the bias.
double incremental_weight(const TwistModel& model, std::span<const int> prefix_prev, int step,
                          bool terminal, double phi_or_score);

// --- Contrastive twist learning ------------------------------------------

struct CtlConfig {
  int samples_per_problem = 80;  // B
  int epochs = 20;
  double learning_rate = 0.5;
  std::uint64_t seed = 0;
};

/// B independent rollouts from p for one problem, with per-trajectory phi.
/// Batches with no correct solution are discarded by the trainer.
struct CtlBatch {
  const Problem* problem = nullptr;
  std::vector<Trajectory> trajectories;
  Eigen::VectorXd phi;

  bool has_positive() const { return phi.size() > 0 && phi.maxCoeff() > 0.0; }
};

CtlBatch make_ctl_batch(const Problem& problem, int count, RandomStream rng);

/// Self-normalized two-term gradient estimate on a sampled batch, in ascent
/// orientation: stepping theta along it lowers the KL objective. The positive
/// term averages grad log V over correct solutions; the contrast term weights
/// by the one-step value ratios w_t = V_t / V_{t-1}. NoPositiveSample if the
/// batch has no correct trajectory.
Eigen::VectorXd ctl_gradient(const ValueModel& model, const CtlBatch& batch);

/// Per-sample coefficient matrix behind ctl_gradient: entry (i, t-1) is the
/// self-normalized positive-minus-contrast coefficient of grad log V(x^i_{1:t}).
/// Exposed so invariances of the weighting itself can be tested.
Eigen::MatrixXd ctl_coefficients(const ValueModel& model, const CtlBatch& batch);

/// Exact objective sum_t KL(sigma_t || pi_t^theta) by enumeration.
double ctl_objective_exact(const ValueModel& model, const Oracle& oracle);

/// Exact gradient of ctl_objective_exact with respect to theta.
Eigen::VectorXd ctl_gradient_exact(const ValueModel& model, const Oracle& oracle);

struct TrainLogEntry {
  int epoch = 0;
  double validation_objective = 0.0;
  int batches_used = 0;
  int batches_discarded = 0;
};

struct TrainResult {
  ValueModel model;
  std::vector<TrainLogEntry> log;
};

/// CTL training over a problem suite. Validation uses the exact enumerated
/// objective averaged over `validation` (falls back to the training problems).
/// NoTrainableData when every batch of the first epoch is discarded.
TrainResult train_ctl(std::span<const Problem> train, std::span<const Problem> validation,
                      const CtlConfig& config);

}  // namespace tsmc

#endif
