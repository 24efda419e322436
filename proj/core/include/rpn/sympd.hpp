#pragma once

// Symmetric positive-definite matrices stored by their lower Cholesky factor.
// Every downstream density, KL divergence, and uncertainty formula works in
// Cholesky space: log-determinants come from the factor diagonal, quadratic
// forms and inverses from triangular solves.  Construction is the single
// point where positive definiteness is enforced.

#include <Eigen/Dense>

#include "rpn/errors.hpp"

namespace rpn {

class SymPd {
 public:
  // Pivots at or below this tolerance fail factorization; no silent jitter.
  static constexpr double kPivotTolerance = 1e-12;

  // Factorizes a dense symmetric matrix.  Throws std::invalid_argument if the
  // input is not square/symmetric (tolerance 1e-9 relative on the asymmetry)
  // and NotPositiveDefinite if any Cholesky pivot is <= kPivotTolerance.
  static SymPd from_dense(const Eigen::MatrixXd& a);

  // Wraps an existing lower-triangular factor L (A = L L^T).  Throws
  // std::invalid_argument if L is not square/lower-triangular or has a
  // diagonal entry <= 0.
  static SymPd from_cholesky(const Eigen::MatrixXd& lower);

  static SymPd identity(int k);

  int dim() const { return static_cast<int>(lower_.rows()); }

  // Lower Cholesky factor L with A = L L^T.
  const Eigen::MatrixXd& cholesky() const { return lower_; }

  // ln det A = 2 sum_i ln L_ii.
  double log_det() const;

  // Reconstructs the dense matrix A = L L^T.
  Eigen::MatrixXd dense() const { return lower_ * lower_.transpose(); }

  // Solves A x = b via two triangular solves.
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const;
  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const;

  // Dense inverse A^{-1} (small dimensions only; used by closed-form
  // variance decompositions).
  Eigen::MatrixXd inverse() const;

  // x^T A x, evaluated as |L^T x|^2.
  double quadratic_form(const Eigen::VectorXd& x) const;

  // x^T A^{-1} x, evaluated as |L^{-1} x|^2.
  double inverse_quadratic_form(const Eigen::VectorXd& x) const;

  // c * A for c > 0 (the factor scales by sqrt(c)).  Throws
  // std::domain_error for c <= 0.
  SymPd scaled(double c) const;

 private:
  explicit SymPd(Eigen::MatrixXd lower) : lower_(std::move(lower)) {}

  Eigen::MatrixXd lower_;
};

// tr(A * B) for SymPd A and a dense symmetric B of the same dimension.
double trace_of_product(const SymPd& a, const Eigen::MatrixXd& b);

}  // namespace rpn
