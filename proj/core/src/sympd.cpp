#include "rpn/sympd.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace rpn {

SymPd SymPd::from_dense(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols() || a.rows() == 0) {
    throw std::invalid_argument("SymPd::from_dense: matrix must be square and non-empty");
  }
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  const double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-9 * scale) {
    throw std::invalid_argument("SymPd::from_dense: matrix is not symmetric (max asymmetry " +
                                std::to_string(asym) + ")");
  }

  // Plain lower Cholesky; a pivot at or below the tolerance means the input
  // is numerically not positive definite, and we refuse rather than jitter.
  const auto n = a.rows();
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double pivot = a(j, j) - l.row(j).head(j).squaredNorm();
    if (!(pivot > kPivotTolerance)) {
      throw NotPositiveDefinite("SymPd::from_dense: pivot " + std::to_string(pivot) +
                                " at column " + std::to_string(j) +
                                " is <= tolerance 1e-12");
    }
    l(j, j) = std::sqrt(pivot);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      const double s = a(i, j) - l.row(i).head(j).dot(l.row(j).head(j));
      l(i, j) = s / l(j, j);
    }
  }
  return SymPd(std::move(l));
}

SymPd SymPd::from_cholesky(const Eigen::MatrixXd& lower) {
  if (lower.rows() != lower.cols() || lower.rows() == 0) {
    throw std::invalid_argument("SymPd::from_cholesky: factor must be square and non-empty");
  }
  const auto n = lower.rows();
  for (Eigen::Index j = 0; j < n; ++j) {
    if (!(lower(j, j) > 0.0)) {
      throw std::invalid_argument("SymPd::from_cholesky: diagonal entry " +
                                  std::to_string(j) + " is not positive");
    }
    for (Eigen::Index i = 0; i < j; ++i) {
      if (lower(i, j) != 0.0) {
        throw std::invalid_argument("SymPd::from_cholesky: factor is not lower-triangular");
      }
    }
  }
  return SymPd(lower);
}

SymPd SymPd::identity(int k) {
  if (k < 1) throw std::invalid_argument("SymPd::identity: dimension must be >= 1");
  return SymPd(Eigen::MatrixXd::Identity(k, k));
}

double SymPd::log_det() const {
  return 2.0 * lower_.diagonal().array().log().sum();
}

Eigen::VectorXd SymPd::solve(const Eigen::VectorXd& b) const {
  if (b.size() != lower_.rows()) {
    throw std::invalid_argument("SymPd::solve: dimension mismatch");
  }
  Eigen::VectorXd y = lower_.triangularView<Eigen::Lower>().solve(b);
  return lower_.transpose().triangularView<Eigen::Upper>().solve(y);
}

Eigen::MatrixXd SymPd::solve(const Eigen::MatrixXd& b) const {
  if (b.rows() != lower_.rows()) {
    throw std::invalid_argument("SymPd::solve: dimension mismatch");
  }
  Eigen::MatrixXd y = lower_.triangularView<Eigen::Lower>().solve(b);
  return lower_.transpose().triangularView<Eigen::Upper>().solve(y);
}

Eigen::MatrixXd SymPd::inverse() const {
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(lower_.rows(), lower_.rows());
  return solve(eye);
}

double SymPd::quadratic_form(const Eigen::VectorXd& x) const {
  if (x.size() != lower_.rows()) {
    throw std::invalid_argument("SymPd::quadratic_form: dimension mismatch");
  }
  return (lower_.transpose() * x).squaredNorm();
}

double SymPd::inverse_quadratic_form(const Eigen::VectorXd& x) const {
  if (x.size() != lower_.rows()) {
    throw std::invalid_argument("SymPd::inverse_quadratic_form: dimension mismatch");
  }
  return lower_.triangularView<Eigen::Lower>().solve(x).squaredNorm();
}

SymPd SymPd::scaled(double c) const {
  if (!(c > 0.0)) {
    throw std::domain_error("SymPd::scaled: factor must be positive");
  }
  return SymPd(std::sqrt(c) * lower_);
}

double trace_of_product(const SymPd& a, const Eigen::MatrixXd& b) {
  if (b.rows() != a.dim() || b.cols() != a.dim()) {
    throw std::invalid_argument("trace_of_product: dimension mismatch");
  }
  // tr(L L^T B) = sum_ij (L L^T)_ij B_ij for symmetric B.
  return (a.dense().array() * b.array()).sum();
}

}  // namespace rpn
