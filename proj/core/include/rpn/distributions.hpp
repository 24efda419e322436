#pragma once

// Parameter types and closed-form operations for the distribution family the
// library is built on: multivariate Gaussians parameterized by precision,
// Wisharts over precision matrices, the conjugate Normal-Wishart, and the
// Student-T that arises as its posterior predictive.  Densities, samplers,
// and KL divergences all work in Cholesky space (see SymPd).

#include <Eigen/Dense>

#include "rpn/rng.hpp"
#include "rpn/sympd.hpp"

namespace rpn {

// Gaussian N(y | mean, precision^{-1}); stored by precision, not covariance.
struct NormalParams {
  Eigen::VectorXd mean;
  SymPd precision;
};

// Wishart W(Lambda | scale, dof) with E[Lambda] = dof * scale; dof > k - 1.
struct WishartParams {
  SymPd scale;
  double dof = 0.0;
};

// Normal-Wishart
//   NW(mu, Lambda | mean, scale, kappa, nu)
//     = N(mu | mean, (kappa Lambda)^{-1}) W(Lambda | scale, nu),
// the conjugate prior over a Gaussian's (mean, precision).
struct NormalWishartParams {
  Eigen::VectorXd mean;  // m
  SymPd scale;           // L
  double kappa = 1.0;    // pseudo-count on the mean, > 0
  double nu = 0.0;       // degrees of freedom, > k - 1
};

// Student-T with a scale MATRIX (not covariance): covariance is
// scale * dof / (dof - 2) when dof > 2.
struct StudentTParams {
  Eigen::VectorXd location;
  SymPd scale;
  double dof = 0.0;
};

// A joint draw (mu, Lambda) from a Normal-Wishart.
struct NwSample {
  Eigen::VectorXd mean;
  SymPd precision;
};

// ---- contract checks (throw std::invalid_argument / std::domain_error) ----
void validate(const NormalParams& p);
void validate(const WishartParams& p);
void validate(const NormalWishartParams& p);
void validate(const StudentTParams& p);

// ---- log densities ----
double mvn_log_pdf(const NormalParams& p, const Eigen::VectorXd& y);
double wishart_log_pdf(const WishartParams& p, const SymPd& lambda);
double nw_log_pdf(const NormalWishartParams& p, const Eigen::VectorXd& mu,
                  const SymPd& lambda);
double t_log_pdf(const StudentTParams& p, const Eigen::VectorXd& y);

// Marginal of y under NW params and a Gaussian likelihood:
//   StudentT(mean, (kappa+1) / (kappa (nu-k+1)) * scale^{-1}, nu-k+1).
StudentTParams posterior_predictive(const NormalWishartParams& p);

// ---- samplers ----
Eigen::VectorXd sample_mvn(const NormalParams& p, Rng& rng);
// Bartlett decomposition: Lambda = (C A)(C A)^T with C = chol(scale), A lower
// triangular, A_ii^2 ~ chi^2(dof - i + 1), off-diagonals standard normal.
SymPd sample_wishart(const WishartParams& p, Rng& rng);
NwSample sample_nw(const NormalWishartParams& p, Rng& rng);

// ---- KL divergences (all KL[p || q]) ----
double kl_mvn(const NormalParams& p, const NormalParams& q);
double kl_wishart(const WishartParams& p, const WishartParams& q);
double kl_nw(const NormalWishartParams& p, const NormalWishartParams& q);

// Differential entropy of the Gaussian: 0.5 (k ln(2 pi e) - ln|precision|).
double mvn_entropy(const NormalParams& p);

}  // namespace rpn
