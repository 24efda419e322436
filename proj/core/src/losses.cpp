#include "rpn/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "rpn/special.hpp"

namespace rpn {
namespace {

constexpr double kLnPi = 1.1447298858494001741434273513531;

}  // namespace

double anneal_temperature(const AnnealSchedule& schedule, int epoch,
                          int total_epochs) {
  if (total_epochs < 1) {
    throw std::invalid_argument("anneal_temperature: total_epochs must be >= 1");
  }
  if (epoch < 0 || epoch >= total_epochs) {
    throw std::invalid_argument("anneal_temperature: epoch out of range");
  }
  if (!(schedule.t_initial >= 1.0)) {
    throw std::domain_error("anneal_temperature: t_initial must be >= 1");
  }
  if (schedule.hold_fraction < 0.0 || schedule.decay_fraction < 0.0 ||
      schedule.hold_fraction + schedule.decay_fraction > 1.0) {
    throw std::domain_error("anneal_temperature: fractions must be nonnegative and sum to <= 1");
  }
  const double hold_end = schedule.hold_fraction * total_epochs;
  const double decay_end = (schedule.hold_fraction + schedule.decay_fraction) * total_epochs;
  if (epoch < hold_end) return schedule.t_initial;
  if (epoch < decay_end) {
    const double progress = (epoch - hold_end) / (decay_end - hold_end);
    return schedule.t_initial + (1.0 - schedule.t_initial) * progress;
  }
  return 1.0;
}

NormalWishartParams prior_from_data(const Eigen::MatrixXd& targets, double epsilon) {
  if (targets.rows() < 1 || targets.cols() < 1) {
    throw std::invalid_argument("prior_from_data: targets must be non-empty (N x K)");
  }
  if (!(epsilon > 0.0)) {
    throw std::domain_error("prior_from_data: epsilon must be positive");
  }
  const auto n = targets.rows();
  const int k = static_cast<int>(targets.cols());
  const double nu0 = k + 1 + epsilon;

  const Eigen::VectorXd mean = targets.colwise().mean();
  const Eigen::MatrixXd centered = targets.rowwise() - mean.transpose();
  // L0^{-1} = nu0/N * scatter.
  Eigen::MatrixXd inv_scale =
      (nu0 / static_cast<double>(n)) * (centered.transpose() * centered);

  SymPd inv_scale_pd = SymPd::identity(k);
  try {
    inv_scale_pd = SymPd::from_dense(inv_scale);
  } catch (const NotPositiveDefinite&) {
    // All-equal (or otherwise degenerate) targets: jitter once with the
    // variance floor, then give up for real if even that is not PD.
    inv_scale += nu0 * 1e-6 * Eigen::MatrixXd::Identity(k, k);
    inv_scale_pd = SymPd::from_dense(inv_scale);
  }
  return NormalWishartParams{mean, SymPd::from_dense(inv_scale_pd.inverse()),
                             epsilon, nu0};
}

double gaussian_nll(const NormalParams& p, const Eigen::VectorXd& y) {
  return -mvn_log_pdf(p, y);
}

double rkl_loss(const NormalWishartParams& omega, const Eigen::VectorXd& y,
                double beta, const NormalWishartParams& prior) {
  validate(omega);
  validate(prior);
  if (beta < 0.0) throw std::domain_error("rkl_loss: beta must be nonnegative");
  if (prior.scale.dim() != omega.scale.dim()) {
    throw std::invalid_argument("rkl_loss: omega/prior dimension mismatch");
  }
  const int k = omega.scale.dim();
  double likelihood = 0.0;
  if (beta != 0.0) {
    if (y.size() != k) throw std::invalid_argument("rkl_loss: target dimension mismatch");
    // E_NW[-ln N(y | mu, Lambda)], the expected Gaussian NLL under omega.
    likelihood = 0.5 * omega.nu * omega.scale.quadratic_form(y - omega.mean) +
                 0.5 * k / omega.kappa - 0.5 * omega.scale.log_det() -
                 0.5 * multivariate_digamma(0.5 * omega.nu, k) + 0.5 * k * kLnPi;
  }
  return beta * likelihood + kl_nw(omega, prior);
}

double multitask_rkl(const Mlp& model, const Eigen::MatrixXd& in_x,
                     const Eigen::MatrixXd& in_y, const Eigen::MatrixXd& ood_x,
                     const PriorConfig& prior) {
  if (in_x.cols() < 1) {
    throw std::invalid_argument("multitask_rkl: in-domain batch is empty");
  }
  if (in_y.cols() != in_x.cols()) {
    throw std::invalid_argument("multitask_rkl: input/target batch sizes differ");
  }
  if (prior.gamma != 0.0 && ood_x.cols() < 1) {
    throw std::invalid_argument("multitask_rkl: OOD batch is empty but gamma != 0");
  }
  double in_sum = 0.0;
  for (Eigen::Index i = 0; i < in_x.cols(); ++i) {
    in_sum += rkl_loss(model.nw_params(in_x.col(i)), in_y.col(i), prior.beta_in,
                       prior.omega0);
  }
  double loss = in_sum / static_cast<double>(in_x.cols());
  if (prior.gamma != 0.0) {
    double ood_sum = 0.0;
    for (Eigen::Index i = 0; i < ood_x.cols(); ++i) {
      ood_sum += rkl_loss(model.nw_params(ood_x.col(i)), prior.omega0.mean, 0.0,
                          prior.omega0);
    }
    loss += prior.gamma * ood_sum / static_cast<double>(ood_x.cols());
  }
  return loss;
}

double end_loss(const std::vector<NormalParams>& members,
                const NormalParams& student) {
  if (members.empty()) throw std::invalid_argument("end_loss: no members");
  double sum = 0.0;
  for (const NormalParams& m : members) sum += kl_mvn(m, student);
  return sum / static_cast<double>(members.size());
}

double md_end_loss(const std::vector<NormalParams>& members,
                   const std::vector<NormalParams>& components) {
  if (members.empty()) throw std::invalid_argument("md_end_loss: no members");
  if (members.size() != components.size()) {
    throw std::invalid_argument("md_end_loss: component count must match member count");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < members.size(); ++i) {
    sum += kl_mvn(members[i], components[i]);
  }
  return sum / static_cast<double>(members.size());
}

std::vector<NormalParams> temperature_reduce(const std::vector<NormalParams>& members,
                                             double temperature) {
  if (members.empty()) throw std::invalid_argument("temperature_reduce: no members");
  if (!(temperature >= 1.0)) {
    throw std::domain_error("temperature_reduce: temperature must be >= 1");
  }
  const int k = members.front().precision.dim();
  const double inv_m = 1.0 / static_cast<double>(members.size());
  Eigen::VectorXd mean_mu = Eigen::VectorXd::Zero(k);
  Eigen::MatrixXd mean_cov = Eigen::MatrixXd::Zero(k, k);
  std::vector<Eigen::MatrixXd> covs;
  covs.reserve(members.size());
  for (const NormalParams& m : members) {
    validate(m);
    if (m.precision.dim() != k) {
      throw std::invalid_argument("temperature_reduce: member dimensions differ");
    }
    covs.push_back(m.precision.inverse());
    mean_mu += inv_m * m.mean;
    mean_cov += inv_m * covs.back();
  }
  const double a = 2.0 / (temperature + 1.0);
  const double b = (temperature - 1.0) / (temperature + 1.0);
  std::vector<NormalParams> reduced;
  reduced.reserve(members.size());
  for (std::size_t i = 0; i < members.size(); ++i) {
    const Eigen::MatrixXd cov = a * covs[i] + b * mean_cov;
    reduced.push_back(NormalParams{
        a * members[i].mean + b * mean_mu,
        SymPd::from_dense(SymPd::from_dense(cov).inverse()),
    });
  }
  return reduced;
}

double endd_loss(const NormalWishartParams& omega,
                 const std::vector<NormalParams>& members, double temperature) {
  validate(omega);
  if (members.empty()) throw std::invalid_argument("endd_loss: no members");
  const std::vector<NormalParams> reduced = temperature_reduce(members, temperature);
  const NormalWishartParams tempered{omega.mean, omega.scale,
                                     temperature * omega.kappa,
                                     temperature * omega.nu};
  double sum = 0.0;
  for (const NormalParams& m : reduced) {
    sum -= nw_log_pdf(tempered, m.mean, m.precision);
  }
  return sum / (temperature * static_cast<double>(members.size()));
}

}  // namespace rpn
