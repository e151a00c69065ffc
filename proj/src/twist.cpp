#include "tsmc/twist.hpp"

#include <cmath>

namespace tsmc {

namespace {

std::uint64_t prefix_hash(std::span<const int> prefix) {
  std::uint64_t h = 1469598103934665603ull;
  for (int v : prefix) {
    h ^= static_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ull;
    h *= 1099511628211ull;
  }
  return h ^ (static_cast<std::uint64_t>(prefix.size()) << 32);
}

}  // namespace

double NoisyValueFn::value(const Problem& problem, std::span<const int> prefix) const {
  const double base = base_->value(problem, prefix);
  if (base <= 0.0) return base;
  RandomStream rng = RandomStream(seed_)
                         .derive(RandomStream::fnv1a(problem.id))
                         .derive(prefix_hash(prefix));
  return base * std::exp(sigma_ * rng.next_gauss());
}

TwistModel::TwistModel(TwistKind kind, std::shared_ptr<const Oracle> oracle)
    : kind_(kind), problem_(&oracle->problem()), oracle_(std::move(oracle)) {
  if (kind_ == TwistKind::sqrt_value_learned) {
    fail(ErrorCode::ConfigError, "learned twist needs a value function, not an oracle");
  }
}

TwistModel::TwistModel(TwistKind kind, const Problem& problem,
                       std::shared_ptr<const ValueFn> values)
    : kind_(kind), problem_(&problem), values_(std::move(values)) {
  if (kind_ != TwistKind::sqrt_value_learned) {
    fail(ErrorCode::ConfigError, "oracle-backed twist kinds are built from an Oracle");
  }
}

TwistModel::TwistModel(TwistKind kind, const Problem& problem) : kind_(kind), problem_(&problem) {
  if (kind_ != TwistKind::constant) {
    fail(ErrorCode::ConfigError, "only the constant twist is model-free");
  }
}

double TwistModel::eval(std::span<const int> prefix) const {
  if (prefix.empty()) return 1.0;  // psi_0
  switch (kind_) {
    case TwistKind::constant:
      return 1.0;
    case TwistKind::sqrt_value_exact:
      return std::sqrt(oracle_->value(prefix, Policy::p));
    case TwistKind::value_exact:
      return oracle_->value(prefix, Policy::p);
    case TwistKind::step_correctness_exact:
      return static_cast<double>(oracle_->prm(prefix));
    case TwistKind::value_mismatched_policy:
      return std::sqrt(oracle_->value(prefix, Policy::mu));
    case TwistKind::sqrt_value_learned:
      return std::sqrt(values_->value(*problem_, prefix));
  }
  return 1.0;
}

double TwistModel::log_eval(std::span<const int> prefix) const {
  const double v = eval(prefix);
  return v > 0.0 ? std::log(v) : -std::numeric_limits<double>::infinity();
}

double TwistModel::terminal_log_score(const Trajectory& traj) const {
  if (kind_ == TwistKind::sqrt_value_learned) {
    const double v = values_->value(*problem_, traj.steps);
    return v > 0.0 ? std::log(v) : -std::numeric_limits<double>::infinity();
  }
  if (!traj.answer) fail(ErrorCode::NotTerminal, "trajectory for " + traj.problem_id);
  return correctness(*traj.answer, *problem_) == 1
             ? 0.0
             : -std::numeric_limits<double>::infinity();
}

double incremental_weight(const TwistModel& model, std::span<const int> prefix_prev, int step,
                          bool terminal, double phi_or_score) {
  const double psi_prev = model.eval(prefix_prev);
  if (psi_prev <= 0.0) {
    fail(ErrorCode::ZeroAncestorTwist,
         "ancestor twist is zero at depth " + std::to_string(prefix_prev.size()));
  }
  std::vector<int> extended(prefix_prev.begin(), prefix_prev.end());
  extended.push_back(step);
  if (terminal) return phi_or_score / psi_prev;
  return model.eval(extended) / psi_prev;
}

// --- Contrastive twist learning ------------------------------------------

CtlBatch make_ctl_batch(const Problem& problem, int count, RandomStream rng) {
  CtlBatch batch;
  batch.problem = &problem;
  batch.trajectories.reserve(static_cast<std::size_t>(count));
  batch.phi = Eigen::VectorXd::Zero(count);
  for (int i = 0; i < count; ++i) {
    Trajectory traj = rollout(problem, rng.derive(static_cast<std::uint64_t>(i)));
    batch.phi[i] = correctness(*traj.answer, problem);
    batch.trajectories.push_back(std::move(traj));
  }
  return batch;
}

Eigen::MatrixXd ctl_coefficients(const ValueModel& model, const CtlBatch& batch) {
  const Problem& problem = *batch.problem;
  const int count = static_cast<int>(batch.trajectories.size());
  int max_len = 0;
  for (const auto& traj : batch.trajectories) max_len = std::max(max_len, traj.length());

  Eigen::MatrixXd coeffs = Eigen::MatrixXd::Zero(count, max_len);
  for (int t = 1; t <= max_len; ++t) {
    double sum_phi = 0.0;
    double sum_w = 0.0;
    Eigen::VectorXd w = Eigen::VectorXd::Zero(count);
    for (int i = 0; i < count; ++i) {
      const auto& steps = batch.trajectories[static_cast<std::size_t>(i)].steps;
      if (static_cast<int>(steps.size()) < t) continue;
      const std::span<const int> here(steps.data(), static_cast<std::size_t>(t));
      const std::span<const int> prev(steps.data(), static_cast<std::size_t>(t - 1));
      w[i] = model.value(problem, here) / model.value(problem, prev);
      sum_w += w[i];
      sum_phi += batch.phi[i];
    }
    if (sum_phi <= 0.0 || sum_w <= 0.0) continue;
    for (int i = 0; i < count; ++i) {
      const auto& steps = batch.trajectories[static_cast<std::size_t>(i)].steps;
      if (static_cast<int>(steps.size()) < t) continue;
      coeffs(i, t - 1) = batch.phi[i] / sum_phi - w[i] / sum_w;
    }
  }
  return coeffs;
}

Eigen::VectorXd ctl_gradient(const ValueModel& model, const CtlBatch& batch) {
  if (!batch.has_positive()) {
    fail(ErrorCode::NoPositiveSample, "batch for " + batch.problem->id);
  }
  const Problem& problem = *batch.problem;
  const Eigen::MatrixXd coeffs = ctl_coefficients(model, batch);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(model.params().size());
  for (int i = 0; i < coeffs.rows(); ++i) {
    const auto& steps = batch.trajectories[static_cast<std::size_t>(i)].steps;
    for (int t = 1; t <= static_cast<int>(steps.size()); ++t) {
      const double c = coeffs(i, t - 1);
      if (c == 0.0) continue;
      const std::span<const int> here(steps.data(), static_cast<std::size_t>(t));
      const int state = state_of(problem, here);
      const double v = model.value_at(t, state);
      grad[model.index(t, state)] += c * (1.0 - v);  // d log sigmoid / d theta
    }
  }
  return grad;
}

namespace {

void require_fixed_arity(const Oracle& oracle) {
  if (oracle.problem().has_end_marker()) {
    fail(ErrorCode::ConfigError, "exact CTL quantities need fixed-length trajectories");
  }
}

}  // namespace

double ctl_objective_exact(const ValueModel& model, const Oracle& oracle) {
  require_fixed_arity(oracle);
  const Problem& problem = oracle.problem();
  const PrefixTree& tree = oracle.tree();
  double total = 0.0;
  for (int t = 1; t <= problem.horizon; ++t) {
    const std::int64_t begin = tree.level_offset(t);
    const std::int64_t size = tree.level_size(t);
    KahanSum z_theta;
    std::vector<double> v_theta(static_cast<std::size_t>(size));
    for (std::int64_t j = 0; j < size; ++j) {
      const auto steps = tree.steps_of(begin + j);
      const double v = model.value(problem, steps);
      v_theta[static_cast<std::size_t>(j)] = v;
      z_theta.add(oracle.prefix_prob(begin + j) * v);
    }
    const double log_z = std::log(z_theta.value());
    KahanSum kl;
    for (std::int64_t j = 0; j < size; ++j) {
      const double s = oracle.sigma(begin + j);
      if (s <= 0.0) continue;
      const double log_pi = oracle.log_prefix_prob(begin + j) +
                            std::log(v_theta[static_cast<std::size_t>(j)]) - log_z;
      kl.add(s * (std::log(s) - log_pi));
    }
    total += kl.value();
  }
  return total;
}

Eigen::VectorXd ctl_gradient_exact(const ValueModel& model, const Oracle& oracle) {
  require_fixed_arity(oracle);
  const Problem& problem = oracle.problem();
  const PrefixTree& tree = oracle.tree();
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(model.params().size());
  for (int t = 1; t <= problem.horizon; ++t) {
    const std::int64_t begin = tree.level_offset(t);
    const std::int64_t size = tree.level_size(t);
    KahanSum z_theta;
    for (std::int64_t j = 0; j < size; ++j) {
      const auto steps = tree.steps_of(begin + j);
      z_theta.add(oracle.prefix_prob(begin + j) * model.value(problem, steps));
    }
    const double z = z_theta.value();
    for (std::int64_t j = 0; j < size; ++j) {
      const auto steps = tree.steps_of(begin + j);
      const int state = state_of(problem, steps);
      const double v = model.value_at(t, state);
      const double dlogv = 1.0 - v;
      const double pi = oracle.prefix_prob(begin + j) * v / z;
      grad[model.index(t, state)] += (pi - oracle.sigma(begin + j)) * dlogv;
    }
  }
  return grad;
}

TrainResult train_ctl(std::span<const Problem> train, std::span<const Problem> validation,
                      const CtlConfig& config) {
  if (train.empty()) fail(ErrorCode::NoTrainableData, "empty training suite");

  int horizon = 0;
  int states = 0;
  for (const Problem& problem : train) {
    horizon = std::max(horizon, problem.horizon);
    states = std::max(states, problem.rule->state_count());
  }

  RandomStream rng = RandomStream(config.seed).derive("ctl");
  std::vector<CtlBatch> batches;
  int discarded = 0;
  bool any_contrast = false;
  for (std::size_t i = 0; i < train.size(); ++i) {
    CtlBatch batch = make_ctl_batch(train[i], config.samples_per_problem,
                                    rng.derive(static_cast<std::uint64_t>(i)));
    if (batch.has_positive()) {
      any_contrast = any_contrast || batch.phi.minCoeff() < 1.0;
      batches.push_back(std::move(batch));
    } else {
      ++discarded;
    }
  }
  if (batches.empty()) {
    fail(ErrorCode::NoTrainableData, "no batch with a correct solution (" +
                                         std::to_string(discarded) + " discarded)");
  }
  if (!any_contrast) {
    // every sample is already correct; the contrast term can never move theta
    fail(ErrorCode::NoTrainableData, "every sampled batch is all-correct");
  }

  std::span<const Problem> val = validation.empty() ? train : validation;
  std::vector<std::shared_ptr<const Oracle>> val_oracles;
  val_oracles.reserve(val.size());
  for (const Problem& problem : val) val_oracles.push_back(Oracle::build(problem));

  TrainResult result{ValueModel(horizon, states), {}};
  auto validate = [&](int epoch, int used) {
    double total = 0.0;
    for (const auto& oracle : val_oracles) total += ctl_objective_exact(result.model, *oracle);
    result.log.push_back({epoch, total / static_cast<double>(val_oracles.size()), used, discarded});
  };

  validate(0, 0);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (const CtlBatch& batch : batches) {
      result.model.params() += config.learning_rate * ctl_gradient(result.model, batch);
    }
    validate(epoch, static_cast<int>(batches.size()));
  }
  return result;
}

}  // namespace tsmc
