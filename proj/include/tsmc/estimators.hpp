#ifndef TSMC_ESTIMATORS_HPP
#define TSMC_ESTIMATORS_HPP

#include <Eigen/Dense>

#include <span>
#include <vector>

#include "tsmc/smc.hpp"

namespace tsmc {

enum class Aggregation { min, prod, last };

double aggregate(const Eigen::Ref<const Eigen::VectorXd>& scores, Aggregation mode);

/// Per-answer accumulated voting weight. Majority-vote tallies hold integer
/// counts; weighted tallies hold scores. Ties resolve toward the smallest
/// answer (canonical ascending order).
struct AnswerTally {
  Eigen::VectorXd weights;
  int samples = 0;

  Answer argmax() const;
  double total() const { return weights.sum(); }
};

/// argmax over answer counts; NoTerminal on an empty input.
Answer majority_vote(std::span<const Answer> answers, int answer_count);

struct WmvOutcome {
  Answer answer = 0;
  bool zero_score_fallback = false;  // all scores zero; fell back to majority vote
};

/// argmax over score-weighted votes. LengthMismatch when scores and answers
/// disagree in length. An all-zero score vector is flagged and decided by
/// plain majority vote on the same answers.
WmvOutcome weighted_majority_vote(std::span<const Answer> answers,
                                  const Eigen::Ref<const Eigen::VectorXd>& scores,
                                  int answer_count);

AnswerTally vote_tally(std::span<const Answer> answers, int answer_count);
AnswerTally weighted_tally(std::span<const Answer> answers,
                           const Eigen::Ref<const Eigen::VectorXd>& scores, int answer_count);

/// Unbiased unnormalized answer-weight estimate from one run:
/// W(a) = mean over mini-batches of Z_prefinal * (1/M) sum_i w_final^i 1(a_i = a).
/// Summing over answers recovers the run's full normalizer estimate.
AnswerTally unnormalized_answer_estimate(const TsmcRunResult& run, int answer_count);

struct EstimatorReport {
  Eigen::VectorXd mean;      // per answer
  Eigen::VectorXd se;        // sample std / sqrt(replications)
  Eigen::VectorXd bias;      // mean - truth
  Eigen::VectorXd variance;  // unbiased sample variance
  int replications = 0;
  double solve_rate = 0.0;   // fraction of replications whose argmax is correct
};

/// Per-answer moments across replicated tallies against an oracle truth.
/// TooFewReplications below two.
EstimatorReport bias_variance_report(std::span<const AnswerTally> tallies,
                                     const Eigen::Ref<const Eigen::VectorXd>& truth,
                                     Answer correct_answer);

// --- Scoring -------------------------------------------------------------

enum class ScorerKind {
  orm_exact,             // single score: phi
  orm_learned,           // single score: V^theta at the full solution
  prm_value,             // per-step exact values under the chosen policy
  prm_step_correctness,  // per-step ground-truth process reward
  tsmc_final_weight,     // run-level; scored by the engine, not here
};

struct Scorer {
  ScorerKind kind = ScorerKind::orm_exact;
  Aggregation aggregation = Aggregation::last;
  Policy policy = Policy::p;  // for prm_value
};

/// Per-step scores for one trajectory. `oracle` backs the exact kinds,
/// `values` the learned kind; pass what the kind needs.
Eigen::VectorXd step_scores(const Scorer& scorer, const Trajectory& traj, const Oracle* oracle,
                            const ValueFn* values, const Problem& problem);

double score_trajectory(const Scorer& scorer, const Trajectory& traj, const Oracle* oracle,
                        const ValueFn* values, const Problem& problem);

// --- Subsampling ----------------------------------------------------------

struct ScoredAnswer {
  Answer answer = 0;
  double score = 0.0;
};

struct SubsamplePoint {
  int size = 0;
  double solve_mean = 0.0;
  double solve_spread = 0.0;  // sample std across resamples
};

/// Solve-rate curve over subsample sizes; draws without replacement,
/// deterministic given the stream. SizeExceedsPool when a size is too large.
std::vector<SubsamplePoint> subsample_curve(std::span<const ScoredAnswer> pool,
                                            Answer correct_answer, int answer_count,
                                            std::span<const int> sizes, int resamples,
                                            RandomStream rng);

}  // namespace tsmc

#endif
