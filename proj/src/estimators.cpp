#include "tsmc/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tsmc {

double aggregate(const Eigen::Ref<const Eigen::VectorXd>& scores, Aggregation mode) {
  if (scores.size() == 0) fail(ErrorCode::EmptyScores, "nothing to aggregate");
  switch (mode) {
    case Aggregation::min:
      return scores.minCoeff();
    case Aggregation::prod:
      return scores.prod();
    case Aggregation::last:
      return scores[scores.size() - 1];
  }
  return scores[scores.size() - 1];
}

Answer AnswerTally::argmax() const {
  Answer best = 0;
  for (Eigen::Index a = 1; a < weights.size(); ++a) {
    if (weights[a] > weights[best]) best = static_cast<Answer>(a);
  }
  return best;
}

namespace {

void check_answers(std::span<const Answer> answers, int answer_count) {
  for (Answer a : answers) {
    if (a < 0 || a >= answer_count) {
      fail(ErrorCode::ConfigError, "answer " + std::to_string(a) + " outside the answer set");
    }
  }
}

}  // namespace

AnswerTally vote_tally(std::span<const Answer> answers, int answer_count) {
  check_answers(answers, answer_count);
  AnswerTally tally{Eigen::VectorXd::Zero(answer_count), static_cast<int>(answers.size())};
  for (Answer a : answers) tally.weights[a] += 1.0;
  return tally;
}

AnswerTally weighted_tally(std::span<const Answer> answers,
                           const Eigen::Ref<const Eigen::VectorXd>& scores, int answer_count) {
  if (static_cast<Eigen::Index>(answers.size()) != scores.size()) {
    fail(ErrorCode::LengthMismatch, std::to_string(answers.size()) + " answers vs " +
                                        std::to_string(scores.size()) + " scores");
  }
  check_answers(answers, answer_count);
  AnswerTally tally{Eigen::VectorXd::Zero(answer_count), static_cast<int>(answers.size())};
  for (std::size_t i = 0; i < answers.size(); ++i) {
    tally.weights[answers[i]] += scores[static_cast<Eigen::Index>(i)];
  }
  return tally;
}

Answer majority_vote(std::span<const Answer> answers, int answer_count) {
  if (answers.empty()) fail(ErrorCode::NoTerminal, "no terminal trajectories to vote on");
  return vote_tally(answers, answer_count).argmax();
}

WmvOutcome weighted_majority_vote(std::span<const Answer> answers,
                                  const Eigen::Ref<const Eigen::VectorXd>& scores,
                                  int answer_count) {
  if (answers.empty()) fail(ErrorCode::NoTerminal, "no terminal trajectories to vote on");
  const AnswerTally tally = weighted_tally(answers, scores, answer_count);
  if (tally.weights.maxCoeff() <= 0.0) {
    // Zero total weight on every answer; decide by plain counts and say so.
    return {majority_vote(answers, answer_count), true};
  }
  return {tally.argmax(), false};
}

AnswerTally unnormalized_answer_estimate(const TsmcRunResult& run, int answer_count) {
  const int batches = run.batch_count();
  const int m = run.minibatch;
  AnswerTally tally{Eigen::VectorXd::Zero(answer_count), static_cast<int>(run.finals.size())};
  for (int b = 0; b < batches; ++b) {
    const double z_pre = std::exp(run.batch_log_z_prefinal[b]);
    if (z_pre == 0.0) continue;  // flagged batch, counts as zero
    Eigen::VectorXd batch_weights = Eigen::VectorXd::Zero(answer_count);
    for (int j = 0; j < m; ++j) {
      const int i = b * m + j;
      const Trajectory& traj = run.finals[static_cast<std::size_t>(i)];
      if (!traj.answer) fail(ErrorCode::NoTerminal, "run has an unfinished trajectory");
      batch_weights[*traj.answer] += std::exp(run.final_log_weight[i]);
    }
    tally.weights += z_pre / static_cast<double>(m) * batch_weights;
  }
  tally.weights /= static_cast<double>(batches);
  return tally;
}

EstimatorReport bias_variance_report(std::span<const AnswerTally> tallies,
                                     const Eigen::Ref<const Eigen::VectorXd>& truth,
                                     Answer correct_answer) {
  const int n = static_cast<int>(tallies.size());
  if (n < 2) fail(ErrorCode::TooFewReplications, std::to_string(n) + " replications");
  const Eigen::Index answers = truth.size();

  EstimatorReport report;
  report.replications = n;
  report.mean = Eigen::VectorXd::Zero(answers);
  report.variance = Eigen::VectorXd::Zero(answers);

  int solved = 0;
  for (const AnswerTally& tally : tallies) {
    if (tally.weights.size() != answers) {
      fail(ErrorCode::LengthMismatch, "tally size does not match the truth vector");
    }
    report.mean += tally.weights;
    if (tally.argmax() == correct_answer) ++solved;
  }
  report.mean /= static_cast<double>(n);
  for (const AnswerTally& tally : tallies) {
    report.variance += (tally.weights - report.mean).cwiseAbs2();
  }
  report.variance /= static_cast<double>(n - 1);
  report.se = (report.variance / static_cast<double>(n)).cwiseSqrt();
  report.bias = report.mean - truth;
  report.solve_rate = static_cast<double>(solved) / static_cast<double>(n);
  return report;
}

Eigen::VectorXd step_scores(const Scorer& scorer, const Trajectory& traj, const Oracle* oracle,
                            const ValueFn* values, const Problem& problem) {
  if (!traj.terminal) fail(ErrorCode::NotTerminal, "scoring needs a complete trajectory");
  const int len = traj.length();
  switch (scorer.kind) {
    case ScorerKind::orm_exact: {
      Eigen::VectorXd s(1);
      s[0] = correctness(*traj.answer, problem);
      return s;
    }
    case ScorerKind::orm_learned: {
      Eigen::VectorXd s(1);
      s[0] = values->value(problem, traj.steps);
      return s;
    }
    case ScorerKind::prm_value: {
      Eigen::VectorXd s(len);
      for (int t = 1; t <= len; ++t) {
        s[t - 1] = oracle->value(
            std::span<const int>(traj.steps.data(), static_cast<std::size_t>(t)), scorer.policy);
      }
      return s;
    }
    case ScorerKind::prm_step_correctness: {
      Eigen::VectorXd s(len);
      for (int t = 1; t <= len; ++t) {
        s[t - 1] =
            oracle->prm(std::span<const int>(traj.steps.data(), static_cast<std::size_t>(t)));
      }
      return s;
    }
    case ScorerKind::tsmc_final_weight:
      fail(ErrorCode::ConfigError, "tsmc_final_weight is scored by the particle engine");
  }
  return Eigen::VectorXd();
}

double score_trajectory(const Scorer& scorer, const Trajectory& traj, const Oracle* oracle,
                        const ValueFn* values, const Problem& problem) {
  return aggregate(step_scores(scorer, traj, oracle, values, problem), scorer.aggregation);
}

std::vector<SubsamplePoint> subsample_curve(std::span<const ScoredAnswer> pool,
                                            Answer correct_answer, int answer_count,
                                            std::span<const int> sizes, int resamples,
                                            RandomStream rng) {
  const int pool_size = static_cast<int>(pool.size());
  std::vector<SubsamplePoint> curve;
  curve.reserve(sizes.size());
  for (std::size_t si = 0; si < sizes.size(); ++si) {
    const int size = sizes[si];
    if (size < 1 || size > pool_size) {
      fail(ErrorCode::SizeExceedsPool, "subsample size " + std::to_string(size) +
                                           " for a pool of " + std::to_string(pool_size));
    }
    const int draws = size == pool_size ? 1 : resamples;
    RandomStream size_rng = rng.derive(static_cast<std::uint64_t>(si));

    double sum = 0.0;
    double sumsq = 0.0;
    std::vector<int> index(static_cast<std::size_t>(pool_size));
    for (int r = 0; r < draws; ++r) {
      std::iota(index.begin(), index.end(), 0);
      RandomStream draw_rng = size_rng.derive(static_cast<std::uint64_t>(r));
      // Partial Fisher-Yates: the first `size` entries form the subsample.
      for (int i = 0; i < size; ++i) {
        const int j =
            i + static_cast<int>(draw_rng.next_u64() % static_cast<std::uint64_t>(pool_size - i));
        std::swap(index[static_cast<std::size_t>(i)], index[static_cast<std::size_t>(j)]);
      }
      std::vector<Answer> answers(static_cast<std::size_t>(size));
      Eigen::VectorXd scores(size);
      for (int i = 0; i < size; ++i) {
        const ScoredAnswer& item = pool[static_cast<std::size_t>(index[static_cast<std::size_t>(i)])];
        answers[static_cast<std::size_t>(i)] = item.answer;
        scores[i] = item.score;
      }
      const double solved =
          weighted_majority_vote(answers, scores, answer_count).answer == correct_answer ? 1.0
                                                                                         : 0.0;
      sum += solved;
      sumsq += solved * solved;
    }
    const double mean = sum / static_cast<double>(draws);
    const double var =
        draws > 1 ? std::max(0.0, (sumsq - sum * mean) / static_cast<double>(draws - 1)) : 0.0;
    curve.push_back({size, mean, std::sqrt(var)});
  }
  return curve;
}

}  // namespace tsmc
