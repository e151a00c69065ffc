#include "tsmc/smc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tsmc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& logs) {
  const double m = logs.maxCoeff();
  if (m == kNegInf) return kNegInf;
  return m + std::log((logs.array() - m).exp().sum());
}

}  // namespace

void TsmcConfig::validate() const {
  if (particles < 1) fail(ErrorCode::ConfigError, "particles must be positive");
  const int m = batch_size(particles);
  if (particles % m != 0) fail(ErrorCode::ConfigError, "minibatch must divide particles");
  if (warmup_tokens < 0) fail(ErrorCode::ConfigError, "warmup_tokens must be nonnegative");
  if (max_resample_rounds < 0) fail(ErrorCode::ConfigError, "max_resample_rounds must be nonnegative");
  if (scheme == ResampleScheme::greedy_topk) {
    if (greedy_k < 1 || m % greedy_k != 0) {
      fail(ErrorCode::ConfigError, "greedy_k must divide the mini-batch size");
    }
  }
}

double ess(const Eigen::Ref<const Eigen::VectorXd>& weights) {
  const double total = weights.sum();
  if (total <= 0.0) fail(ErrorCode::AllZeroWeights, "effective sample size undefined");
  const double sq = weights.squaredNorm();
  return total * total / sq;
}

std::vector<int> resample(const Eigen::Ref<const Eigen::VectorXd>& weights, ResampleScheme scheme,
                          RandomStream& rng, int greedy_k) {
  const int m = static_cast<int>(weights.size());
  const double total = weights.sum();
  if (total <= 0.0 || weights.minCoeff() < 0.0) {
    fail(ErrorCode::AllZeroWeights, "resampling needs positive total weight");
  }
  std::vector<int> ancestors(static_cast<std::size_t>(m));

  switch (scheme) {
    case ResampleScheme::multinomial: {
      for (int i = 0; i < m; ++i) ancestors[static_cast<std::size_t>(i)] = rng.next_categorical(weights);
      break;
    }
    case ResampleScheme::stratified: {
      // One uniform per stratum of the normalized CDF (Kitagawa). Zero-weight
      // entries carry no CDF mass and are skipped outright.
      int j = 0;
      double cumulative = weights[0] / total;
      for (int i = 0; i < m; ++i) {
        const double u = (static_cast<double>(i) + rng.next_double()) / static_cast<double>(m);
        while ((u > cumulative || weights[j] <= 0.0) && j + 1 < m) {
          ++j;
          cumulative += weights[j] / total;
        }
        ancestors[static_cast<std::size_t>(i)] = j;
      }
      break;
    }
    case ResampleScheme::greedy_topk: {
      if (greedy_k < 1 || m % greedy_k != 0) {
        fail(ErrorCode::ConfigError, "greedy_k must divide the weight count");
      }
      std::vector<int> order(static_cast<std::size_t>(m));
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](int a, int b) { return weights[a] > weights[b]; });
      std::vector<int> kept(order.begin(), order.begin() + greedy_k);
      std::sort(kept.begin(), kept.end());
      const int copies = m / greedy_k;
      for (int i = 0; i < m; ++i) {
        ancestors[static_cast<std::size_t>(i)] = kept[static_cast<std::size_t>(i / copies)];
      }
      break;
    }
  }
  return ancestors;
}

namespace {

struct Slot {
  Trajectory traj;
  double log_psi = 0.0;      // twist of the current prefix (log), or terminal score once done
  double pending = 0.0;      // log weight accumulated since the last round
  double lineage = 0.0;      // log product of increments along the genealogy
};

}  // namespace

TsmcRunResult run_tsmc(const Problem& problem, const TsmcConfig& config, const TwistModel& twist,
                       RandomStream rng) {
  config.validate();
  const int n = config.particles;
  const int m = config.batch_size(n);
  const int batches = n / m;

  TsmcRunResult result;
  result.minibatch = m;
  result.batch_flagged.assign(static_cast<std::size_t>(batches), 0);
  result.batch_log_z_prefinal = Eigen::VectorXd::Zero(batches);

  RandomStream step_base = rng.derive("step");
  RandomStream resample_base = rng.derive("resample");

  std::vector<Slot> slots(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) slots[static_cast<std::size_t>(i)].traj.problem_id = problem.id;

  for (int t = 1; t <= problem.horizon; ++t) {
    // Extension: one keyed draw per (particle, step).
    for (int i = 0; i < n; ++i) {
      Slot& slot = slots[static_cast<std::size_t>(i)];
      if (slot.traj.terminal) continue;  // weight 1 while others finish

      RandomStream draw = step_base.derive(static_cast<std::uint64_t>(i))
                              .derive(static_cast<std::uint64_t>(t));
      auto [step, lp] = sample_step(*problem.generator, slot.traj, draw);
      slot.traj.steps.push_back(step);
      slot.traj.step_logprobs.push_back(lp);

      const bool done = problem.terminates(slot.traj.length(), step);
      double log_w;
      if (slot.log_psi == kNegInf) {
        // Dead prefix: the twist cannot recover, every later weight is zero.
        log_w = kNegInf;
        if (done) finalize(problem, slot.traj);
      } else if (done) {
        finalize(problem, slot.traj);
        const double score = twist.terminal_log_score(slot.traj);
        log_w = score - slot.log_psi;
        slot.log_psi = score;
      } else {
        const double log_psi_new = twist.log_eval(slot.traj.steps);
        log_w = log_psi_new - slot.log_psi;
        slot.log_psi = log_psi_new;
      }
      slot.pending += log_w;
      slot.lineage += log_w;
    }

    // Resampling barrier.
    const bool eligible = t < problem.horizon &&
                          t * problem.step_arity >= config.warmup_tokens &&
                          result.rounds_executed < config.max_resample_rounds;
    if (!eligible) continue;

    ResampleRound round;
    round.step = t;
    round.ancestors.resize(static_cast<std::size_t>(n));
    round.prefixes.reserve(static_cast<std::size_t>(n));
    for (const Slot& slot : slots) round.prefixes.push_back(slot.traj.steps);
    round.ess_per_batch = Eigen::VectorXd::Zero(batches);

    std::vector<Slot> next(slots);
    for (int b = 0; b < batches; ++b) {
      const int offset = b * m;
      Eigen::VectorXd pending(m);
      for (int j = 0; j < m; ++j) pending[j] = slots[static_cast<std::size_t>(offset + j)].pending;

      const double log_total = log_sum_exp(pending);
      RandomStream round_rng = resample_base.derive(static_cast<std::uint64_t>(result.rounds_executed))
                                   .derive(static_cast<std::uint64_t>(b));
      std::vector<int> ancestors;
      if (log_total == kNegInf) {
        // Every particle in the batch is provably dead. Keep the process alive
        // with an equal-weight round; the batch's normalizer is zero from here.
        ancestors = resample(Eigen::VectorXd::Ones(m), config.scheme, round_rng, config.greedy_k);
        result.batch_log_z_prefinal[b] = kNegInf;
        if (!result.batch_flagged[static_cast<std::size_t>(b)]) {
          round.flagged_batches.push_back(b);
          result.batch_flagged[static_cast<std::size_t>(b)] = 1;
        }
        round.ess_per_batch[b] = 0.0;
      } else {
        Eigen::VectorXd weights = (pending.array() - pending.maxCoeff()).exp();
        round.ess_per_batch[b] = ess(weights);
        ancestors = resample(weights, config.scheme, round_rng, config.greedy_k);
        result.batch_log_z_prefinal[b] += log_total - std::log(static_cast<double>(m));
        if (config.scheme != ResampleScheme::greedy_topk) {
          for (int a : ancestors) {
            if (pending[a] == kNegInf) {
              fail(ErrorCode::ZeroAncestorTwist, "zero-weight ancestor survived resampling");
            }
          }
        }
      }
      for (int j = 0; j < m; ++j) {
        const int src = offset + ancestors[static_cast<std::size_t>(j)];
        round.ancestors[static_cast<std::size_t>(offset + j)] = src;
        next[static_cast<std::size_t>(offset + j)] = slots[static_cast<std::size_t>(src)];
        next[static_cast<std::size_t>(offset + j)].pending = 0.0;
      }
    }
    slots.swap(next);
    ++result.rounds_executed;
    result.rounds.push_back(std::move(round));
  }

  result.finals.reserve(static_cast<std::size_t>(n));
  result.final_log_weight = Eigen::VectorXd::Zero(n);
  result.lineage_log_product = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    result.final_log_weight[i] = slots[static_cast<std::size_t>(i)].pending;
    result.lineage_log_product[i] = slots[static_cast<std::size_t>(i)].lineage;
    result.finals.push_back(std::move(slots[static_cast<std::size_t>(i)].traj));
  }

  result.batch_log_z = Eigen::VectorXd::Zero(batches);
  for (int b = 0; b < batches; ++b) {
    const double final_mean =
        log_sum_exp(result.final_log_weight.segment(b * m, m)) - std::log(static_cast<double>(m));
    result.batch_log_z[b] = result.batch_log_z_prefinal[b] + final_mean;
  }
  result.log_z = log_sum_exp(result.batch_log_z) - std::log(static_cast<double>(batches));
  return result;
}

TsmcRunResult run_is(const Problem& problem, int n, RandomStream rng) {
  TsmcConfig config;
  config.particles = n;
  config.minibatch = 0;
  config.warmup_tokens = 0;
  config.max_resample_rounds = 0;
  return run_tsmc(problem, config, TwistModel(TwistKind::constant, problem), rng);
}

SbsResult run_sbs(const Problem& problem, int m, int k, const ValueFn& values, RandomStream rng) {
  if (k < 1 || m % k != 0) fail(ErrorCode::ConfigError, "beam width must divide the batch size");
  RandomStream step_base = rng.derive("step");

  std::vector<Trajectory> beams(static_cast<std::size_t>(m));
  Eigen::VectorXd beam_value = Eigen::VectorXd::Ones(m);
  for (auto& traj : beams) traj.problem_id = problem.id;

  for (int t = 1; t <= problem.horizon; ++t) {
    for (int i = 0; i < m; ++i) {
      Trajectory& traj = beams[static_cast<std::size_t>(i)];
      if (traj.terminal) continue;
      RandomStream draw = step_base.derive(static_cast<std::uint64_t>(i))
                              .derive(static_cast<std::uint64_t>(t));
      auto [step, lp] = sample_step(*problem.generator, traj, draw);
      traj.steps.push_back(step);
      traj.step_logprobs.push_back(lp);
      if (problem.terminates(traj.length(), step)) finalize(problem, traj);
      beam_value[i] = values.value(problem, traj.steps);
    }
    if (t >= problem.horizon) break;

    std::vector<int> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return beam_value[a] > beam_value[b]; });
    std::vector<int> kept(order.begin(), order.begin() + k);
    std::sort(kept.begin(), kept.end());

    std::vector<Trajectory> next(static_cast<std::size_t>(m));
    Eigen::VectorXd next_value(m);
    const int copies = m / k;
    for (int i = 0; i < m; ++i) {
      const int src = kept[static_cast<std::size_t>(i / copies)];
      next[static_cast<std::size_t>(i)] = beams[static_cast<std::size_t>(src)];
      next_value[i] = beam_value[src];
    }
    beams.swap(next);
    beam_value.swap(next_value);
  }

  return {std::move(beams), std::move(beam_value)};
}

}  // namespace tsmc
