#pragma once

#include <string>
#include <vector>

namespace smvp::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;  // worst value / failing seed on failure
  double seconds = 0;
};

struct VerifyOptions {
  uint64_t seed = 0;
  /// Seeds per finite-difference check.
  int64_t fd_seeds = 20;
  /// Sequences for the ground-truth consistency sweep.
  int64_t gt_sequences = 20;
  /// Monte-Carlo sample count for the KL cross-check.
  int64_t mc_samples = 1000000;
};

/// Runs the full invariant suite: gradient checks for every cataloged
/// primitive and composed op, geometry oracles, variational cross-checks,
/// ground-truth self-consistency, and the full toy-model loss check.
std::vector<CheckResult> run_all(const VerifyOptions& opts = {});

/// Prints one pass/fail line per check; returns the process exit code
/// (0 all passed, 4 otherwise).
int report(const std::vector<CheckResult>& results);

}  // namespace smvp::verify
