#pragma once

// Tape builders for the training objectives.  Every quantity is carried as
// one tape node per parameter component, holding either a 1x1 scalar (one
// example) or a 1xN row (a whole batch): all formulas are coefficient-wise
// in the example dimension, so the same builder serves both uses.  Matrix
// structure (Cholesky factors, quadratic forms, triangular solves) is
// unrolled over the small target dimension K.

#include <Eigen/Dense>

#include <vector>

#include "rpn/distributions.hpp"
#include "rpn/graph.hpp"
#include "rpn/nn.hpp"

namespace rpn {

// Normal-Wishart head outputs as tape nodes.  chol holds the row-major
// lower factor C of the scale matrix L = C C^T.
struct NwValues {
  int k = 1;
  std::vector<ad::Value> mean;
  std::vector<ad::Value> chol;
  ad::Value kappa;
  ad::Value nu;
};

// Gaussian parameters as tape nodes; chol is the lower factor of the
// PRECISION matrix.
struct GaussianValues {
  int k = 1;
  std::vector<ad::Value> mean;
  std::vector<ad::Value> chol;
};

// ---- head transforms on raw graph outputs (row-sliced, then the same
// softplus/floor mapping as the plain evaluation path) ----
NwValues nw_head(const MlpConfig& cfg, const ad::Value& raw);
GaussianValues gaussian_head(const MlpConfig& cfg, const ad::Value& raw);
std::vector<GaussianValues> mixture_head(const MlpConfig& cfg, const ad::Value& raw);

// Lifts fixed per-example Gaussians (teacher outputs) to constant nodes.
// mean is K x N; prec_chol is the row-major lower precision factor,
// K(K+1)/2 x N.
GaussianValues lift_gaussian(ad::Tape& tape, const Eigen::MatrixXd& mean,
                             const Eigen::MatrixXd& prec_chol);

// Packs per-example NormalParams into the column layout lift_gaussian eats.
struct GaussianColumns {
  Eigen::MatrixXd mean;       // K x N
  Eigen::MatrixXd prec_chol;  // K(K+1)/2 x N
};
GaussianColumns pack_gaussians(const std::vector<NormalParams>& per_example);

// ---- per-example objective rows (1xN in, 1xN out; batch reduction is the
// caller's job so multitask mixing stays explicit) ----

// -ln N(y | mean, precision) per example; y is a K x N constant node.
ad::Value gaussian_nll_rows(const GaussianValues& p, const ad::Value& y);

// beta * E_NW[-ln N(y | .)] + KL[NW(omega) || NW(prior)] per example.
ad::Value rkl_loss_rows(const NwValues& omega, const ad::Value& y, double beta,
                        const NormalWishartParams& prior);

// The beta = 0 case: prior matching only, no targets involved.
ad::Value rkl_prior_rows(const NwValues& omega, const NormalWishartParams& prior);

// KL[member || student] per example (member entries are constant nodes).
ad::Value kl_mvn_rows(const GaussianValues& member, const GaussianValues& student);

// mean_m KL[member_m || student] per example.
ad::Value end_loss_rows(const std::vector<GaussianValues>& members,
                        const GaussianValues& student);

// mean_m KL[member_m || component_m] per example (index-aligned).
ad::Value md_end_loss_rows(const std::vector<GaussianValues>& members,
                           const std::vector<GaussianValues>& components);

// 1/(T M) sum_m -ln nw(mu_m, Lambda_m | mean, scale, T kappa, T nu) per
// example; reduced_members must already be temperature-reduced (their chol
// nodes factor the reduced PRECISION).
ad::Value endd_loss_rows(const std::vector<GaussianValues>& reduced_members,
                         const NwValues& omega, double temperature);

}  // namespace rpn
