#pragma once

namespace evfuse {

/// Digamma function for x > 0. Shifts the argument upward with
/// psi(x) = psi(x + 1) - 1/x, then sums the asymptotic expansion.
/// Throws DomainError for x <= 0 or non-finite x.
double digamma(double x);

/// Trigamma (derivative of digamma) for x > 0, same scheme.
double trigamma(double x);

}  // namespace evfuse
