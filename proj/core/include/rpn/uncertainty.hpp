#pragma once

// Closed-form uncertainty measures for Normal-Wishart predictions and their
// empirical counterparts for ensembles of Gaussians.  Entropy-based measures
// (total entropy, expected data entropy, mutual information) and the expected
// pairwise KL come from the conjugate structure; the variance-based trio is
// the law-of-total-variance split of the posterior predictive covariance.

#include <optional>
#include <string>
#include <vector>

#include "rpn/distributions.hpp"

namespace rpn {

// How a matrix-valued uncertainty is reduced to one number.
enum class Scalarization { kLogDet, kTrace };

// Differential entropy of the posterior predictive Student-T (total
// uncertainty).  Requires nu > k - 1.
double predictive_entropy(const NormalWishartParams& p);

// E_{NW}[ H[N(mu, Lambda)] ] (expected data uncertainty).  Requires nu > k-1.
double expected_data_entropy(const NormalWishartParams& p);

// I[y, (mu, Lambda)] = predictive_entropy - expected_data_entropy, evaluated
// with the scale-matrix terms cancelled analytically, so the result depends
// on (kappa, nu, k) only.  Requires nu > k - 1.
double mutual_information(const NormalWishartParams& p);

// Expected pairwise KL between two independent draws of the NW: an upper
// bound on the mutual information.  Requires nu > k + 1.
double epkl(const NormalWishartParams& p);

// Law of total variance for the posterior predictive:
//   total = data + knowledge,
//   data      = scale^{-1} / (nu - k - 1)          (E[Lambda^{-1}])
//   knowledge = scale^{-1} / (kappa (nu - k - 1))  (Cov[mu])
// Requires nu > k + 1.
struct VarianceDecomposition {
  SymPd total;
  SymPd data;
  SymPd knowledge;
};
VarianceDecomposition variance_decomposition(const NormalWishartParams& p);

// Empirical law of total variance over ensemble members (population
// convention: covariances divide by M).  Knowledge may be singular, so the
// matrices come back dense rather than as SymPd.
struct EnsembleVarianceDecomposition {
  Eigen::MatrixXd total;
  Eigen::MatrixXd data;
  Eigen::MatrixXd knowledge;
};
EnsembleVarianceDecomposition ensemble_variance_decomposition(
    const std::vector<NormalParams>& members);

double scalarize(const SymPd& m, Scalarization mode);
// PSD overload: with kLogDet a singular matrix scalarizes to -infinity.
double scalarize(const Eigen::MatrixXd& m, Scalarization mode);

// One prediction's uncertainty summary.  Fields that a model family cannot
// provide stay unset and serialize as null.
struct UncertaintyReport {
  std::optional<double> total_entropy;
  std::optional<double> expected_data_entropy;
  std::optional<double> mutual_information;
  std::optional<double> epkl;
  double total_variance = 0.0;
  double expected_data_variance = 0.0;
  double knowledge_variance = 0.0;
  Scalarization scalarization = Scalarization::kLogDet;

  // Flat JSON object with the seven measure fields plus the scalarization
  // tag; unset or non-finite values serialize as null.
  std::string to_json() const;
};

// All seven measures of a Normal-Wishart prediction.  Requires nu > k + 1
// (the variance trio and EPKL need it).
UncertaintyReport uncertainty_report(const NormalWishartParams& p,
                                     Scalarization mode = Scalarization::kLogDet);

// Ensemble measures: variance trio via the empirical law of total variance,
// EPKL as the mean pairwise KL over ordered member pairs, expected data
// entropy as the mean member entropy.  Total entropy and entropy-based
// mutual information have no closed form for a mixture and stay unset.
// Requires at least two members.
UncertaintyReport ensemble_measures(const std::vector<NormalParams>& members,
                                    Scalarization mode = Scalarization::kLogDet);

}  // namespace rpn
