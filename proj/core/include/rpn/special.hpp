#pragma once

// Scalar special functions needed by the Normal-Wishart machinery: log-gamma,
// digamma, trigamma and their multivariate extensions.  All are implemented
// with asymptotic (Stirling-type) series combined with an upward recurrence
// shift for small arguments, which keeps the accuracy auditable and avoids an
// external dependency.  Absolute/relative error is < 1e-12 on the positive
// real axis (the series remainder at the shift point is below 1e-16).

namespace rpn {

// ln Gamma(a) for a > 0.  Throws std::domain_error otherwise.
double log_gamma(double a);

// psi(a) = d/da ln Gamma(a) for a > 0.  Throws std::domain_error otherwise.
double digamma(double a);

// psi'(a) = d^2/da^2 ln Gamma(a) for a > 0.  Throws std::domain_error
// otherwise.
double trigamma(double a);

// ln Gamma_k(a), the multivariate log-gamma:
//   ln Gamma_k(a) = k(k-1)/4 * ln(pi) + sum_{j=1..k} ln Gamma(a + (1-j)/2).
// Requires a > (k-1)/2 and k >= 1.
double log_multivariate_gamma(double a, int k);

// psi_k(a) = d/da ln Gamma_k(a) = sum_{j=1..k} psi(a + (1-j)/2).
// Requires a > (k-1)/2 and k >= 1.
double multivariate_digamma(double a, int k);

// d/da psi_k(a) = sum_{j=1..k} psi'(a + (1-j)/2).  Same domain as above.
// Needed for exact reverse-mode derivatives of multivariate_digamma.
double multivariate_trigamma(double a, int k);

// Numerically stable ln(1 + e^x); the shared definition used by both the
// plain evaluation path and the autodiff graph so the two agree bitwise.
double softplus(double x);

// Derivative of softplus: the logistic sigmoid 1 / (1 + e^-x).
double sigmoid(double x);

// Inverse of softplus: ln(e^y - 1) for y > 0 (used to seed head biases).
double softplus_inverse(double y);

}  // namespace rpn
