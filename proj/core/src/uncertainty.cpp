#include "rpn/uncertainty.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "rpn/special.hpp"

namespace rpn {
namespace {

constexpr double kLnPi = 1.1447298858494001741434273513531;

void require_nu_above(const NormalWishartParams& p, double offset, const char* fn) {
  validate(p);
  const int k = p.scale.dim();
  if (!(p.nu > k + offset)) {
    throw std::domain_error(std::string(fn) + ": nu must exceed k + " +
                            std::to_string(offset) + ", got nu = " +
                            std::to_string(p.nu) + " at k = " + std::to_string(k));
  }
}

}  // namespace

double predictive_entropy(const NormalWishartParams& p) {
  validate(p);
  const int k = p.scale.dim();
  const double nu = p.nu;
  const double dof = nu - k + 1;  // Student-T degrees of freedom, > 0
  return 0.5 * (nu + 1) * (digamma(0.5 * (nu + 1)) - digamma(0.5 * dof)) -
         log_gamma(0.5 * (nu + 1)) + log_gamma(0.5 * dof) +
         0.5 * k * std::log(dof * M_PI) - 0.5 * p.scale.log_det() +
         0.5 * k * std::log((p.kappa + 1) / (p.kappa * dof));
}

double expected_data_entropy(const NormalWishartParams& p) {
  validate(p);
  const int k = p.scale.dim();
  return 0.5 * (k * (kLnPi + 1.0) - p.scale.log_det() -
                multivariate_digamma(0.5 * p.nu, k));
}

double mutual_information(const NormalWishartParams& p) {
  validate(p);
  const int k = p.scale.dim();
  const double nu = p.nu;
  const double dof = nu - k + 1;
  // predictive_entropy - expected_data_entropy with both the ln|L| and the
  // ln(nu - k + 1) / ln(pi) terms cancelled, so the result is exactly
  // invariant to the scale matrix.
  return 0.5 * (nu + 1) * (digamma(0.5 * (nu + 1)) - digamma(0.5 * dof)) -
         log_gamma(0.5 * (nu + 1)) + log_gamma(0.5 * dof) +
         0.5 * k * std::log((p.kappa + 1) / p.kappa) - 0.5 * k +
         0.5 * multivariate_digamma(0.5 * nu, k);
}

double epkl(const NormalWishartParams& p) {
  require_nu_above(p, 1.0, "epkl");
  const int k = p.scale.dim();
  return 0.5 * p.nu * k * (1.0 / p.kappa + 1.0) / (p.nu - k - 1) - 0.5 * k +
         0.5 * k / p.kappa;
}

VarianceDecomposition variance_decomposition(const NormalWishartParams& p) {
  require_nu_above(p, 1.0, "variance_decomposition");
  const int k = p.scale.dim();
  const Eigen::MatrixXd inv = p.scale.inverse();
  const double c = 1.0 / (p.nu - k - 1);
  return VarianceDecomposition{
      SymPd::from_dense((1.0 + p.kappa) / p.kappa * c * inv),
      SymPd::from_dense(c * inv),
      SymPd::from_dense(c / p.kappa * inv),
  };
}

EnsembleVarianceDecomposition ensemble_variance_decomposition(
    const std::vector<NormalParams>& members) {
  if (members.size() < 2) {
    throw std::invalid_argument("ensemble_variance_decomposition: need at least 2 members");
  }
  const int k = members.front().precision.dim();
  for (const auto& m : members) {
    validate(m);
    if (m.precision.dim() != k) {
      throw std::invalid_argument("ensemble_variance_decomposition: member dimensions differ");
    }
  }
  const double inv_m = 1.0 / static_cast<double>(members.size());
  Eigen::VectorXd mean_mu = Eigen::VectorXd::Zero(k);
  Eigen::MatrixXd data = Eigen::MatrixXd::Zero(k, k);
  for (const auto& m : members) {
    mean_mu += inv_m * m.mean;
    data += inv_m * m.precision.inverse();
  }
  Eigen::MatrixXd knowledge = Eigen::MatrixXd::Zero(k, k);
  for (const auto& m : members) {
    const Eigen::VectorXd d = m.mean - mean_mu;
    knowledge += inv_m * d * d.transpose();
  }
  return EnsembleVarianceDecomposition{data + knowledge, data, knowledge};
}

double scalarize(const SymPd& m, Scalarization mode) {
  switch (mode) {
    case Scalarization::kLogDet:
      return m.log_det();
    case Scalarization::kTrace:
      return m.cholesky().squaredNorm();
  }
  throw std::invalid_argument("scalarize: unknown mode");
}

double scalarize(const Eigen::MatrixXd& m, Scalarization mode) {
  if (m.rows() != m.cols()) {
    throw std::invalid_argument("scalarize: matrix must be square");
  }
  switch (mode) {
    case Scalarization::kLogDet:
      try {
        return SymPd::from_dense(m).log_det();
      } catch (const NotPositiveDefinite&) {
        return -std::numeric_limits<double>::infinity();
      }
    case Scalarization::kTrace:
      return m.trace();
  }
  throw std::invalid_argument("scalarize: unknown mode");
}

namespace {

nlohmann::json field(const std::optional<double>& v) {
  if (!v.has_value() || !std::isfinite(*v)) return nullptr;
  return *v;
}

nlohmann::json field(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

}  // namespace

std::string UncertaintyReport::to_json() const {
  nlohmann::json j;
  j["total_entropy"] = field(total_entropy);
  j["expected_data_entropy"] = field(expected_data_entropy);
  j["mutual_information"] = field(mutual_information);
  j["epkl"] = field(epkl);
  j["total_variance"] = field(total_variance);
  j["expected_data_variance"] = field(expected_data_variance);
  j["knowledge_variance"] = field(knowledge_variance);
  j["scalarization"] = scalarization == Scalarization::kLogDet ? "logdet" : "trace";
  return j.dump();
}

UncertaintyReport uncertainty_report(const NormalWishartParams& p, Scalarization mode) {
  const VarianceDecomposition v = variance_decomposition(p);
  UncertaintyReport r;
  r.total_entropy = predictive_entropy(p);
  r.expected_data_entropy = expected_data_entropy(p);
  r.mutual_information = mutual_information(p);
  r.epkl = epkl(p);
  r.total_variance = scalarize(v.total, mode);
  r.expected_data_variance = scalarize(v.data, mode);
  r.knowledge_variance = scalarize(v.knowledge, mode);
  r.scalarization = mode;
  return r;
}

UncertaintyReport ensemble_measures(const std::vector<NormalParams>& members,
                                    Scalarization mode) {
  const EnsembleVarianceDecomposition v = ensemble_variance_decomposition(members);
  const auto m = static_cast<double>(members.size());

  double pair_kl = 0.0;
  for (std::size_t i = 0; i < members.size(); ++i) {
    for (std::size_t j = 0; j < members.size(); ++j) {
      if (i != j) pair_kl += kl_mvn(members[i], members[j]);
    }
  }
  pair_kl /= m * (m - 1.0);

  double mean_entropy = 0.0;
  for (const auto& member : members) mean_entropy += mvn_entropy(member) / m;

  UncertaintyReport r;
  r.expected_data_entropy = mean_entropy;
  r.epkl = pair_kl;
  r.total_variance = scalarize(v.total, mode);
  r.expected_data_variance = scalarize(v.data, mode);
  r.knowledge_variance = scalarize(v.knowledge, mode);
  r.scalarization = mode;
  return r;
}

}  // namespace rpn
