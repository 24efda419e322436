#include "rpn/distributions.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "rpn/special.hpp"

namespace rpn {
namespace {

constexpr double kLn2Pi = 1.8378770664093454835606594728112;
constexpr double kLn2 = 0.69314718055994530941723212145818;

void check_dim(Eigen::Index got, Eigen::Index want, const char* what) {
  if (got != want) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch (got " +
                                std::to_string(got) + ", want " +
                                std::to_string(want) + ")");
  }
}

}  // namespace

void validate(const NormalParams& p) {
  check_dim(p.mean.size(), p.precision.dim(), "NormalParams");
}

void validate(const WishartParams& p) {
  if (!(p.dof > p.scale.dim() - 1)) {
    throw std::domain_error("WishartParams: dof must exceed k - 1 = " +
                            std::to_string(p.scale.dim() - 1) + ", got " +
                            std::to_string(p.dof));
  }
}

void validate(const NormalWishartParams& p) {
  check_dim(p.mean.size(), p.scale.dim(), "NormalWishartParams");
  if (!(p.kappa > 0.0)) {
    throw std::domain_error("NormalWishartParams: kappa must be positive, got " +
                            std::to_string(p.kappa));
  }
  if (!(p.nu > p.scale.dim() - 1)) {
    throw std::domain_error("NormalWishartParams: nu must exceed k - 1 = " +
                            std::to_string(p.scale.dim() - 1) + ", got " +
                            std::to_string(p.nu));
  }
}

void validate(const StudentTParams& p) {
  check_dim(p.location.size(), p.scale.dim(), "StudentTParams");
  if (!(p.dof > 0.0)) {
    throw std::domain_error("StudentTParams: dof must be positive, got " +
                            std::to_string(p.dof));
  }
}

double mvn_log_pdf(const NormalParams& p, const Eigen::VectorXd& y) {
  validate(p);
  check_dim(y.size(), p.precision.dim(), "mvn_log_pdf");
  const int k = p.precision.dim();
  return -0.5 * p.precision.quadratic_form(y - p.mean) + 0.5 * p.precision.log_det() -
         0.5 * k * kLn2Pi;
}

double wishart_log_pdf(const WishartParams& p, const SymPd& lambda) {
  validate(p);
  check_dim(lambda.dim(), p.scale.dim(), "wishart_log_pdf");
  const int k = p.scale.dim();
  const double nu = p.dof;
  // tr(scale^{-1} Lambda) = |C_scale^{-1} C_lambda|_F^2.
  const double trace = p.scale.cholesky()
                           .triangularView<Eigen::Lower>()
                           .solve(lambda.cholesky())
                           .squaredNorm();
  return 0.5 * (nu - k - 1) * lambda.log_det() - 0.5 * trace -
         0.5 * nu * k * kLn2 - 0.5 * nu * p.scale.log_det() -
         log_multivariate_gamma(0.5 * nu, k);
}

double nw_log_pdf(const NormalWishartParams& p, const Eigen::VectorXd& mu,
                  const SymPd& lambda) {
  validate(p);
  check_dim(mu.size(), p.scale.dim(), "nw_log_pdf");
  check_dim(lambda.dim(), p.scale.dim(), "nw_log_pdf");
  const int k = p.scale.dim();
  const double gauss = 0.5 * k * std::log(p.kappa) + 0.5 * lambda.log_det() -
                       0.5 * k * kLn2Pi -
                       0.5 * p.kappa * lambda.quadratic_form(mu - p.mean);
  return gauss + wishart_log_pdf({p.scale, p.nu}, lambda);
}

double t_log_pdf(const StudentTParams& p, const Eigen::VectorXd& y) {
  validate(p);
  check_dim(y.size(), p.scale.dim(), "t_log_pdf");
  const int k = p.scale.dim();
  const double nu = p.dof;
  const double quad = p.scale.inverse_quadratic_form(y - p.location);
  return log_gamma(0.5 * (nu + k)) - log_gamma(0.5 * nu) -
         0.5 * k * (std::log(nu) + std::log(M_PI)) - 0.5 * p.scale.log_det() -
         0.5 * (nu + k) * std::log1p(quad / nu);
}

StudentTParams posterior_predictive(const NormalWishartParams& p) {
  validate(p);
  const int k = p.scale.dim();
  const double dof = p.nu - k + 1;
  const double c = (p.kappa + 1.0) / (p.kappa * dof);
  return StudentTParams{p.mean, SymPd::from_dense(c * p.scale.inverse()), dof};
}

Eigen::VectorXd sample_mvn(const NormalParams& p, Rng& rng) {
  validate(p);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd z(p.mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = gauss(rng);
  // cov = precision^{-1} = C^{-T} C^{-1}, so x = mean + C^{-T} z.
  return p.mean + p.precision.cholesky()
                      .transpose()
                      .triangularView<Eigen::Upper>()
                      .solve(z);
}

SymPd sample_wishart(const WishartParams& p, Rng& rng) {
  validate(p);
  const int k = p.scale.dim();
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(k, k);
  for (int i = 0; i < k; ++i) {
    std::chi_squared_distribution<double> chi2(p.dof - i);
    a(i, i) = std::sqrt(chi2(rng));
    for (int j = 0; j < i; ++j) a(i, j) = gauss(rng);
  }
  // (C A) is lower triangular with positive diagonal: a valid factor.
  return SymPd::from_cholesky(p.scale.cholesky() * a);
}

NwSample sample_nw(const NormalWishartParams& p, Rng& rng) {
  validate(p);
  SymPd lambda = sample_wishart({p.scale, p.nu}, rng);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd z(p.mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = gauss(rng);
  Eigen::VectorXd mu = p.mean + lambda.cholesky()
                                    .transpose()
                                    .triangularView<Eigen::Upper>()
                                    .solve(z) /
                                    std::sqrt(p.kappa);
  return NwSample{std::move(mu), std::move(lambda)};
}

double kl_mvn(const NormalParams& p, const NormalParams& q) {
  validate(p);
  validate(q);
  check_dim(q.precision.dim(), p.precision.dim(), "kl_mvn");
  const int k = p.precision.dim();
  const Eigen::VectorXd diff = p.mean - q.mean;
  // tr(Lambda_q Lambda_p^{-1}) = |C_p^{-1} C_q|_F^2.
  const double trace = p.precision.cholesky()
                           .triangularView<Eigen::Lower>()
                           .solve(q.precision.cholesky())
                           .squaredNorm();
  return 0.5 * (q.precision.quadratic_form(diff) + p.precision.log_det() -
                q.precision.log_det() + trace - k);
}

double kl_wishart(const WishartParams& p, const WishartParams& q) {
  validate(p);
  validate(q);
  check_dim(q.scale.dim(), p.scale.dim(), "kl_wishart");
  const int k = p.scale.dim();
  const double trace = q.scale.cholesky()
                           .triangularView<Eigen::Lower>()
                           .solve(p.scale.cholesky())
                           .squaredNorm();
  const double log_det_ratio = p.scale.log_det() - q.scale.log_det();
  return 0.5 * p.dof * (trace - k) - 0.5 * q.dof * log_det_ratio +
         log_multivariate_gamma(0.5 * q.dof, k) -
         log_multivariate_gamma(0.5 * p.dof, k) +
         0.5 * (p.dof - q.dof) * multivariate_digamma(0.5 * p.dof, k);
}

double kl_nw(const NormalWishartParams& p, const NormalWishartParams& q) {
  validate(p);
  validate(q);
  check_dim(q.scale.dim(), p.scale.dim(), "kl_nw");
  const int k = p.scale.dim();
  const Eigen::VectorXd diff = p.mean - q.mean;
  // E_p[Lambda] = nu_p L_p appears in the conditional-Gaussian expectation.
  const double mean_term = 0.5 * q.kappa * p.nu * p.scale.quadratic_form(diff);
  const double ratio = q.kappa / p.kappa;
  const double kappa_term = 0.5 * k * (ratio - std::log(ratio) - 1.0);
  return mean_term + kappa_term +
         kl_wishart({p.scale, p.nu}, {q.scale, q.nu});
}

double mvn_entropy(const NormalParams& p) {
  validate(p);
  const int k = p.precision.dim();
  return 0.5 * (k * (kLn2Pi + 1.0) - p.precision.log_det());
}

}  // namespace rpn
