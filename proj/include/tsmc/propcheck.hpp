#ifndef TSMC_PROPCHECK_HPP
#define TSMC_PROPCHECK_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tsmc/io.hpp"

namespace tsmc {

/// One verification check. `measured` always carries the numbers behind the
/// verdict, never just a boolean; `runtime_ms` is display-only and kept out of
/// the persisted ledger so reruns are byte-identical.
struct CheckResult {
  std::string id;
  bool pass = false;
  double tolerance = 0.0;
  Json measured;
  double runtime_ms = 0.0;
};

CheckResult check_variance_identity(std::uint64_t seed);
CheckResult check_optimal_target(std::uint64_t seed);
CheckResult check_ground_truth_prm(std::uint64_t seed);
CheckResult check_martingale(std::uint64_t seed);
CheckResult check_telescoping(std::uint64_t seed);
CheckResult check_unbiasedness(std::uint64_t seed);
CheckResult check_variance_ordering(std::uint64_t seed);
CheckResult check_ctl_gradient(std::uint64_t seed);

/// Every check, seeded from one master seed; deterministic.
std::vector<CheckResult> run_all_checks(std::uint64_t master_seed);

/// Line-delimited ledger (no timing fields).
void write_ledger(const std::filesystem::path& path, const std::vector<CheckResult>& checks);
/// Human-readable summary with runtimes.
std::string ledger_table(const std::vector<CheckResult>& checks);

bool all_passed(const std::vector<CheckResult>& checks);

}  // namespace tsmc

#endif
