#pragma once

// Self-contained property checks reused by the unit suites (small trial
// counts) and by the acceptance runner (full trial counts).

#include <cstdint>
#include <string>

namespace evfuse::testing {

struct Check {
  bool pass = true;
  std::string detail;

  void expect(bool ok, const std::string& what) {
    if (!ok && pass) detail = what;
    pass = pass && ok;
  }
};

/// Algebraic laws, oracle agreement, the belief-drop and uncertainty bounds
/// and u-monotonicity on `trials` random pairs/triples for each N in {2,3,5}.
Check opinion_properties(std::size_t trials, std::uint64_t seed);

/// Closed-form evidence loss vs Monte-Carlo Dirichlet cross-entropy.
Check evidence_loss_monte_carlo(std::size_t n_alphas, std::size_t samples, std::uint64_t seed);

/// Every differentiable operation against central differences.
Check gradient_suite(std::uint64_t seed);

/// Random expert-layer passes stay inside the evidence and uncertainty bounds.
Check evidence_bound(std::size_t passes, std::uint64_t seed);

/// The hand-worked metric examples.
Check metric_examples();

}  // namespace evfuse::testing
