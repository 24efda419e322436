#pragma once

// Training objectives: the reverse-KL objective against a Normal-Wishart
// prior (with its multitask in-domain/OOD split), ensemble distillation
// losses (moment-matching EnD, member-matching MD-EnD, and the
// distribution-distillation EnD^2 objective with temperature reduction and
// annealing), and the plain Gaussian NLL baseline.  These are the
// double-valued evaluation forms; the tape builders used for training live
// in graph_losses.hpp and agree with these to round-off.

#include <Eigen/Dense>

#include <vector>

#include "rpn/distributions.hpp"
#include "rpn/nn.hpp"

namespace rpn {

// Prior and multitask weights for the reverse-KL objective.
struct PriorConfig {
  NormalWishartParams omega0;
  double beta_in = 1e2;  // likelihood weight on in-domain pairs
  double gamma = 0.5;    // weight on the OOD prior-matching term
};

// Piecewise temperature schedule: hold at t_initial for hold_fraction of
// the run, decay linearly to 1 over decay_fraction, then stay at 1.
struct AnnealSchedule {
  double t_initial = 10.0;
  double hold_fraction = 0.2;
  double decay_fraction = 0.6;
};
double anneal_temperature(const AnnealSchedule& schedule, int epoch,
                          int total_epochs);

// Semi-informative prior from raw targets (N x K): mean at the target mean,
// inverse scale nu0/N * scatter, kappa0 = epsilon, nu0 = K + 1 + epsilon.
// A degenerate scatter receives a single 1e-6 diagonal variance jitter.
NormalWishartParams prior_from_data(const Eigen::MatrixXd& targets, double epsilon);

// Negative log-likelihood of y under a Gaussian head prediction.
double gaussian_nll(const NormalParams& p, const Eigen::VectorXd& y);

// Reverse KL between the model NW and the product of the (tempered)
// likelihood and the prior, up to the theta-independent normalizer:
//   beta * E_NW[-ln N(y | mu, Lambda)] + KL[NW(omega) || NW(prior)].
double rkl_loss(const NormalWishartParams& omega, const Eigen::VectorXd& y,
                double beta, const NormalWishartParams& prior);

// Mean in-domain rkl at prior.beta_in plus prior.gamma times the mean OOD
// rkl at beta = 0, both through the model; inputs are column-wise batches.
double multitask_rkl(const Mlp& model, const Eigen::MatrixXd& in_x,
                     const Eigen::MatrixXd& in_y, const Eigen::MatrixXd& ood_x,
                     const PriorConfig& prior);

// Moment-matching distillation: mean_m KL[member_m || student].
double end_loss(const std::vector<NormalParams>& members,
                const NormalParams& student);

// Member-matching distillation: mean_m KL[member_m || component_m]; the
// component list must be index-aligned with the members.
double md_end_loss(const std::vector<NormalParams>& members,
                   const std::vector<NormalParams>& components);

// Temperature reduction: each member is pulled toward the ensemble's
// moment average,
//   mu_T = 2/(T+1) mu + (T-1)/(T+1) mean(mu),
//   Sigma_T = 2/(T+1) Sigma + (T-1)/(T+1) mean(Sigma).
// T = 1 is the identity; requires T >= 1.
std::vector<NormalParams> temperature_reduce(const std::vector<NormalParams>& members,
                                             double temperature);

// Distribution distillation: the scaled NW likelihood of the
// temperature-reduced members under omega tempered as (T kappa, T nu):
//   1/(T M) sum_m -ln nw(mu_T^m, Lambda_T^m | mean, scale, T kappa, T nu).
double endd_loss(const NormalWishartParams& omega,
                 const std::vector<NormalParams>& members, double temperature);

}  // namespace rpn
