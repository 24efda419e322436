#pragma once

// Predictive metrics (RMSE, NLL under Gaussian / Student-T / mixture
// posteriors), prediction-rejection curves with the Prediction Rejection
// Ratio, and AUC-ROC for out-of-distribution detection over any scalar
// uncertainty score.

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "rpn/distributions.hpp"

namespace rpn {

// sqrt of the per-dimension mean squared error over N x K prediction and
// target blocks.
double rmse(const Eigen::MatrixXd& preds, const Eigen::MatrixXd& targets);

// -log density of y under the posterior; the mixture form uses a stable
// log-sum-exp of member log densities minus ln M.
double predictive_nll(const StudentTParams& posterior, const Eigen::VectorXd& y);
double predictive_nll(const NormalParams& posterior, const Eigen::VectorXd& y);
double predictive_nll(const std::vector<NormalParams>& mixture,
                      const Eigen::VectorXd& y);

// Two self-consistent curve/baseline pairings for the rejection ratio.
//  - kMassLine (default): the curve records retained squared-error mass
//    normalized by the TOTAL example count, and areas are measured against
//    the straight line from (0, MSE) to (1, 0).  Under this pairing a
//    random ordering scores 0 in expectation, the oracle scores exactly 1,
//    and an anti-oracle ordering scores below 0.
//  - kMeanFlat: the curve records the MSE of the retained examples and
//    areas are measured against the flat full-MSE baseline.
enum class PrrConvention { kMassLine, kMeanFlat };

struct RejectionCurve {
  Eigen::VectorXd fractions;   // N+1 grid points r/N, r = 0..N
  Eigen::VectorXd mass_error;  // retained squared-error mass / N
  Eigen::VectorXd mean_error;  // retained-set MSE; 0 at full rejection
  double ar_uncertainty_mass = 0.0;  // areas against the line baseline
  double ar_oracle_mass = 0.0;
  double ar_uncertainty_mean = 0.0;  // areas against the flat baseline
  double ar_oracle_mean = 0.0;
};

// Rejects examples in decreasing score order (stable ties by original
// index) and records the error curve plus areas for both conventions; the
// oracle ordering rejects by the true errors.
RejectionCurve rejection_curve(const std::vector<double>& errors,
                               const std::vector<double>& scores);

// AR_uncertainty / AR_oracle under the chosen convention.
double prr(const RejectionCurve& curve,
           PrrConvention convention = PrrConvention::kMassLine);

// Mann-Whitney U / (n_in * n_out) with ties counted 1/2; higher score means
// more out-of-distribution.
double auc_roc(const std::vector<double>& in_scores,
               const std::vector<double>& out_scores);

// Two-column CSV (rejection_fraction, error) of the convention's curve.
std::string curve_to_csv(const RejectionCurve& curve,
                         PrrConvention convention = PrrConvention::kMassLine);

}  // namespace rpn
