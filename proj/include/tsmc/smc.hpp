#ifndef TSMC_SMC_HPP
#define TSMC_SMC_HPP

#include <Eigen/Dense>

#include <vector>

#include "tsmc/twist.hpp"

namespace tsmc {

enum class ResampleScheme { multinomial, stratified, greedy_topk };

struct TsmcConfig {
  int particles = 8;            // N
  int minibatch = 0;            // M; 0 means resample across the full batch (M = N)
  int warmup_tokens = 50;       // no resampling until this many tokens exist
  int max_resample_rounds = 5;  // executed rounds per run
  ResampleScheme scheme = ResampleScheme::stratified;
  int greedy_k = 8;             // K for greedy_topk

  int batch_size(int n) const { return minibatch > 0 ? minibatch : n; }
  void validate() const;
};

/// Ancestor indices for one mini-batch. multinomial draws i.i.d. from the
/// self-normalized weights; stratified inverts one uniform per stratum
/// [(i-1)/M, i/M) through the weight CDF; greedy_topk clones each of the K
/// largest weights M/K times (ties broken toward the lower index).
/// AllZeroWeights when the weights carry no mass.
std::vector<int> resample(const Eigen::Ref<const Eigen::VectorXd>& weights, ResampleScheme scheme,
                          RandomStream& rng, int greedy_k = 0);

/// Effective sample size (sum w)^2 / sum w^2. AllZeroWeights on zero mass.
double ess(const Eigen::Ref<const Eigen::VectorXd>& weights);

/// One resampling round: everything needed to audit the genealogy.
struct ResampleRound {
  int step = 0;                            // round ran after this step
  std::vector<int> ancestors;              // length N, within-batch by construction
  std::vector<std::vector<int>> prefixes;  // slot prefixes entering the round
  Eigen::VectorXd ess_per_batch;
  std::vector<int> flagged_batches;        // batches that hit the all-zero fallback this round
};

struct TsmcRunResult {
  std::vector<Trajectory> finals;        // N complete trajectories
  Eigen::VectorXd final_log_weight;      // log weight accumulated since the last round
  Eigen::VectorXd lineage_log_product;   // sum of log w_t along each survivor's genealogy
  Eigen::VectorXd batch_log_z_prefinal;  // per batch: sum over rounds of log mean weight
  Eigen::VectorXd batch_log_z;           // per batch: prefinal plus the final-step mean
  double log_z = 0.0;                    // log of the across-batch mean of exp(batch_log_z)
  std::vector<ResampleRound> rounds;
  std::vector<char> batch_flagged;       // sticky all-zero-weight flag per batch
  int rounds_executed = 0;
  int minibatch = 0;

  int batch_count() const { return static_cast<int>(batch_log_z.size()); }
};

/// The twisted particle loop. Proposal is the problem's generator, so the
/// incremental weights are pure twist ratios; resampling happens at step
/// boundaries, independently inside each mini-batch, subject to the token
/// warm-up and the round cap. Particles that terminate early contribute their
/// terminal weight at the next executed round and weight one afterwards.
///
/// Dead mini-batches (every weight zero, possible only with exact twists) fall
/// back to an equal-weight round, push the normalizer to zero, and are flagged;
/// the run then counts zero toward unnormalized estimates, which keeps the
/// estimator unbiased while leaving the genealogy inspectable.
TsmcRunResult run_tsmc(const Problem& problem, const TsmcConfig& config, const TwistModel& twist,
                       RandomStream rng);

/// N independent rollouts from p; terminal weights are phi. Identical streams
/// to run_tsmc, so a zero-round TSMC run reproduces it bit for bit.
TsmcRunResult run_is(const Problem& problem, int n, RandomStream rng);

/// Step-level beam search: extend M particles, keep the K highest values,
/// clone each M/K times. Deterministic given the value function and seed.
struct SbsResult {
  std::vector<Trajectory> finals;
  Eigen::VectorXd final_value;
};
SbsResult run_sbs(const Problem& problem, int m, int k, const ValueFn& values, RandomStream rng);

}  // namespace tsmc

#endif
