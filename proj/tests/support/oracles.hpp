#pragma once

// Reference implementations that share no code with the library. Each one
// recomputes a quantity from its textbook definition so tests can compare.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "evfuse/opinion.hpp"

namespace evfuse::testing {

/// Dempster's rule over arbitrary focal sets encoded as bitmasks. Opinions
/// are lifted to masses on {singletons, whole frame}, combined, and projected
/// back.
Opinion dempster_oracle(const Opinion& a, const Opinion& b);

/// Uniformly random opinion (flat Dirichlet over the N + 1 masses).
Opinion random_opinion(std::size_t n, std::mt19937_64& rng);

struct MonteCarloEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
};

/// E_{p ~ Dir(alpha)}[-log p_label], by sampling Gamma variates.
MonteCarloEstimate dirichlet_cross_entropy_mc(std::span<const double> alpha, std::size_t label,
                                              std::size_t samples, std::uint64_t seed);

/// Central difference of f around *x, restoring *x afterwards.
double central_difference(double& x, const std::function<double()>& f, double h = 1e-5);

/// max |a - n| / max(|a|, |n|, floor) across paired entries.
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                          double floor = 1e-8);

/// Best dice over tau = 0.01..0.99 between min-max normalized u > tau and
/// the error mask; written as a plain exhaustive sweep.
double ueo_sweep_oracle(const std::vector<double>& u, const std::vector<std::uint8_t>& err);

/// Minimal XML check: one root element, every tag closed in order.
bool xml_well_formed(const std::string& text, std::string* why = nullptr);

}  // namespace evfuse::testing
