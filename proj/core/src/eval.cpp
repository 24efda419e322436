#include "rpn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace rpn {

double rmse(const Eigen::MatrixXd& preds, const Eigen::MatrixXd& targets) {
  if (preds.rows() != targets.rows() || preds.cols() != targets.cols()) {
    throw std::invalid_argument("rmse: shape mismatch");
  }
  if (preds.size() == 0) throw std::invalid_argument("rmse: empty input");
  return std::sqrt((preds - targets).squaredNorm() /
                   static_cast<double>(preds.size()));
}

double predictive_nll(const StudentTParams& posterior, const Eigen::VectorXd& y) {
  return -t_log_pdf(posterior, y);
}

double predictive_nll(const NormalParams& posterior, const Eigen::VectorXd& y) {
  return -mvn_log_pdf(posterior, y);
}

double predictive_nll(const std::vector<NormalParams>& mixture,
                      const Eigen::VectorXd& y) {
  if (mixture.empty()) throw std::invalid_argument("predictive_nll: empty mixture");
  std::vector<double> logs;
  logs.reserve(mixture.size());
  for (const NormalParams& p : mixture) logs.push_back(mvn_log_pdf(p, y));
  const double peak = *std::max_element(logs.begin(), logs.end());
  double sum = 0.0;
  for (double lp : logs) sum += std::exp(lp - peak);
  return -(peak + std::log(sum) - std::log(static_cast<double>(mixture.size())));
}

namespace {

// Indices in decreasing-score order; ties keep their original order.
std::vector<std::size_t> rejection_order(const std::vector<double>& scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  return idx;
}

struct CurvePair {
  Eigen::VectorXd mass;  // retained error mass / N, N+1 points
  Eigen::VectorXd mean;  // retained MSE, 0 at full rejection
};

CurvePair curves_for_order(const std::vector<double>& errors,
                           const std::vector<std::size_t>& order) {
  const auto n = static_cast<Eigen::Index>(errors.size());
  CurvePair c{Eigen::VectorXd(n + 1), Eigen::VectorXd(n + 1)};
  double retained = std::accumulate(errors.begin(), errors.end(), 0.0);
  for (Eigen::Index r = 0; r <= n; ++r) {
    // Endpoint pinned to zero: running subtraction leaves round-off residue.
    c.mass(r) = r < n ? retained / static_cast<double>(n) : 0.0;
    c.mean(r) = r < n ? retained / static_cast<double>(n - r) : 0.0;
    if (r < n) retained -= errors[order[static_cast<std::size_t>(r)]];
  }
  return c;
}

// Trapezoid-rule area between a baseline and a curve on the uniform grid.
double area_above(const Eigen::VectorXd& baseline, const Eigen::VectorXd& curve) {
  const Eigen::Index n = curve.size() - 1;
  double area = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const double left = baseline(r) - curve(r);
    const double right = baseline(r + 1) - curve(r + 1);
    area += 0.5 * (left + right) / static_cast<double>(n);
  }
  return area;
}

}  // namespace

RejectionCurve rejection_curve(const std::vector<double>& errors,
                               const std::vector<double>& scores) {
  if (errors.size() != scores.size()) {
    throw std::invalid_argument("rejection_curve: length mismatch");
  }
  if (errors.size() < 2) {
    throw std::invalid_argument("rejection_curve: need at least two examples");
  }
  for (double e : errors) {
    if (!(e >= 0.0)) {
      throw std::domain_error("rejection_curve: errors must be nonnegative");
    }
  }
  const auto n = static_cast<Eigen::Index>(errors.size());
  const double mse =
      std::accumulate(errors.begin(), errors.end(), 0.0) / static_cast<double>(n);

  RejectionCurve out;
  out.fractions =
      Eigen::VectorXd::LinSpaced(n + 1, 0.0, 1.0);
  const CurvePair by_score = curves_for_order(errors, rejection_order(scores));
  const CurvePair by_error = curves_for_order(errors, rejection_order(errors));
  out.mass_error = by_score.mass;
  out.mean_error = by_score.mean;

  const Eigen::VectorXd line =
      mse * (Eigen::VectorXd::Ones(n + 1) - out.fractions);
  const Eigen::VectorXd flat = Eigen::VectorXd::Constant(n + 1, mse);
  out.ar_uncertainty_mass = area_above(line, by_score.mass);
  out.ar_oracle_mass = area_above(line, by_error.mass);
  out.ar_uncertainty_mean = area_above(flat, by_score.mean);
  out.ar_oracle_mean = area_above(flat, by_error.mean);
  return out;
}

double prr(const RejectionCurve& curve, PrrConvention convention) {
  const bool mass = convention == PrrConvention::kMassLine;
  const double ar_oracle = mass ? curve.ar_oracle_mass : curve.ar_oracle_mean;
  const double ar_unc = mass ? curve.ar_uncertainty_mass : curve.ar_uncertainty_mean;
  if (!(ar_oracle > 0.0)) {
    throw std::domain_error("prr: oracle rejection area is zero (all errors equal)");
  }
  return ar_unc / ar_oracle;
}

double auc_roc(const std::vector<double>& in_scores,
               const std::vector<double>& out_scores) {
  if (in_scores.empty() || out_scores.empty()) {
    throw std::invalid_argument("auc_roc: both score sets must be nonempty");
  }
  struct Tagged {
    double score;
    bool is_out;
  };
  std::vector<Tagged> all;
  all.reserve(in_scores.size() + out_scores.size());
  for (double s : in_scores) all.push_back({s, false});
  for (double s : out_scores) all.push_back({s, true});
  std::sort(all.begin(), all.end(),
            [](const Tagged& a, const Tagged& b) { return a.score < b.score; });

  // Midranks: tied values share the average of their 1-based rank range.
  double rank_sum_out = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // avg of i+1..j
    for (std::size_t t = i; t < j; ++t) {
      if (all[t].is_out) rank_sum_out += midrank;
    }
    i = j;
  }
  const double n_out = static_cast<double>(out_scores.size());
  const double n_in = static_cast<double>(in_scores.size());
  const double u = rank_sum_out - 0.5 * n_out * (n_out + 1.0);
  return u / (n_in * n_out);
}

std::string curve_to_csv(const RejectionCurve& curve, PrrConvention convention) {
  const Eigen::VectorXd& error = convention == PrrConvention::kMassLine
                                     ? curve.mass_error
                                     : curve.mean_error;
  std::ostringstream os;
  os.precision(17);
  os << "rejection_fraction,error\n";
  for (Eigen::Index r = 0; r < curve.fractions.size(); ++r) {
    os << curve.fractions(r) << "," << error(r) << "\n";
  }
  return os.str();
}

}  // namespace rpn
