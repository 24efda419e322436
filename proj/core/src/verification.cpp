#include "rpn/verification.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "rpn/distributions.hpp"
#include "rpn/log.hpp"
#include "rpn/losses.hpp"
#include "rpn/rng.hpp"
#include "rpn/uncertainty.hpp"

namespace rpn {

namespace {

// Streaming mean / variance (Welford).
struct Accumulator {
  long n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }

  double standard_error() const {
    if (n < 2) return std::numeric_limits<double>::infinity();
    return std::sqrt(m2 / (static_cast<double>(n) - 1.0) /
                     static_cast<double>(n));
  }
};

VerificationRow make_row(const std::string& formula, int dim, int setting,
                         double closed, const Accumulator& acc,
                         double threshold) {
  VerificationRow row;
  row.formula = formula;
  row.dim = dim;
  row.setting = setting;
  row.closed_form = closed;
  row.mc_estimate = acc.mean;
  row.abs_z = std::abs(closed - acc.mean) / acc.standard_error();
  row.pass = row.abs_z < threshold;
  return row;
}

// One randomized parameter setting: a well-conditioned NW pair plus fixed
// evaluation points.
struct Setting {
  NormalWishartParams p;
  NormalWishartParams q;
  StudentTParams posterior;    // posterior predictive of p
  NormalParams mvn_p;          // N(m_p, L_p-as-precision)
  NormalParams mvn_q;
  Eigen::VectorXd y_bracket;   // fixed point for the expected-NLL bracket
  Eigen::VectorXd y_density;   // fixed point for the predictive density
};

Eigen::MatrixXd random_spd(int k, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd a(k, k);
  for (int r = 0; r < k; ++r) {
    for (int c = 0; c < k; ++c) a(r, c) = normal(rng);
  }
  return a * a.transpose() / static_cast<double>(k) +
         0.1 * Eigen::MatrixXd::Identity(k, k);
}

Setting make_setting(int index, Rng& rng) {
  const int k = 1 + index % 3;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Eigen::VectorXd m(k);
  for (int i = 0; i < k; ++i) m(i) = 2.0 * normal(rng);
  const double scale_p = 0.5 + 1.5 * unit(rng);
  const Eigen::MatrixXd base_p = random_spd(k, rng);
  const double kappa = std::exp(std::log(0.1) + std::log(100.0) * unit(rng));
  const double nu = k + 4.0 + 8.0 * unit(rng);

  const NormalWishartParams p{m, SymPd::from_dense(scale_p * base_p), kappa, nu};

  Eigen::VectorXd m_q(k);
  for (int i = 0; i < k; ++i) m_q(i) = m(i) + 0.3 * normal(rng);
  const Eigen::MatrixXd base_q = 0.8 * base_p + 0.2 * random_spd(k, rng);
  const NormalWishartParams q{m_q, SymPd::from_dense(scale_p * base_q),
                              1.5 * kappa, nu + 1.0};

  return Setting{p,
                 q,
                 posterior_predictive(p),
                 NormalParams{p.mean, p.scale},
                 NormalParams{q.mean, q.scale},
                 m + Eigen::VectorXd::Constant(k, 0.4),
                 m - Eigen::VectorXd::Constant(k, 0.3)};
}

}  // namespace

double VerificationReport::max_abs_z_for(const std::string& formula) const {
  double max_z = 0.0;
  for (const VerificationRow& row : rows) {
    if (row.formula == formula) max_z = std::max(max_z, row.abs_z);
  }
  return max_z;
}

std::string VerificationReport::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const VerificationRow& row : rows) {
    rows_json.push_back({{"formula", row.formula},
                         {"dim", row.dim},
                         {"setting", row.setting},
                         {"closed_form", row.closed_form},
                         {"mc_estimate", row.mc_estimate},
                         {"abs_z", row.abs_z},
                         {"pass", row.pass}});
  }
  const nlohmann::json j{{"format", "nwpn-verification"},
                         {"version", 1},
                         {"samples", samples},
                         {"threshold", threshold},
                         {"max_abs_z", max_abs_z},
                         {"pass", pass},
                         {"rows", rows_json}};
  return j.dump(2);
}

VerificationReport run_verification(std::uint64_t seed, long samples,
                                    int settings, double threshold) {
  if (samples < 2) throw std::invalid_argument("run_verification: samples < 2");
  if (settings < 1) throw std::invalid_argument("run_verification: settings < 1");

  VerificationReport report;
  report.samples = samples;
  report.threshold = threshold;

  for (int s = 0; s < settings; ++s) {
    Rng rng(mix_seed(seed, 500 + s));
    const Setting st = make_setting(s, rng);
    const int k = static_cast<int>(st.p.mean.size());

    // Closed forms under test.
    const double cf_pred_entropy = predictive_entropy(st.p);
    const double cf_data_entropy = expected_data_entropy(st.p);
    const double cf_mi = mutual_information(st.p);
    const double cf_epkl = epkl(st.p);
    const Eigen::MatrixXd cf_total_var = variance_decomposition(st.p).total.dense();
    // rkl_loss against omega itself has zero KL remainder, leaving exactly
    // the expected-Gaussian-NLL bracket E_NW[-ln N(y | mu, Lambda)].
    const double cf_bracket = rkl_loss(st.p, st.y_bracket, 1.0, st.p);
    const double cf_density = std::exp(t_log_pdf(st.posterior, st.y_density));
    const double cf_kl_nw = kl_nw(st.p, st.q);
    const double cf_kl_wishart = kl_wishart(WishartParams{st.p.scale, st.p.nu},
                                            WishartParams{st.q.scale, st.q.nu});
    const double cf_kl_mvn = kl_mvn(st.mvn_p, st.mvn_q);

    Accumulator pred_entropy_acc, data_entropy_acc, mi_acc, epkl_acc, bracket_acc,
        density_acc, kl_nw_acc, kl_wishart_acc, kl_mvn_acc;
    std::vector<Accumulator> var_acc(static_cast<std::size_t>(k) * k);
    auto var_at = [&](int a, int b) -> Accumulator& {
      return var_acc[static_cast<std::size_t>(a) * k + b];
    };

    for (long i = 0; i < samples; ++i) {
      const NwSample draw = sample_nw(st.p, rng);
      const NormalParams likelihood{draw.mean, draw.precision};
      const Eigen::VectorXd y = sample_mvn(likelihood, rng);

      const double neg_log_t = -t_log_pdf(st.posterior, y);
      pred_entropy_acc.add(neg_log_t);
      const double cond_entropy = mvn_entropy(likelihood);
      data_entropy_acc.add(cond_entropy);
      mi_acc.add(neg_log_t - cond_entropy);

      const NwSample draw2 = sample_nw(st.p, rng);
      epkl_acc.add(kl_mvn(likelihood, NormalParams{draw2.mean, draw2.precision}));

      const Eigen::VectorXd d = y - st.p.mean;
      for (int a = 0; a < k; ++a) {
        for (int b = 0; b < k; ++b) var_at(a, b).add(d(a) * d(b));
      }

      bracket_acc.add(-mvn_log_pdf(likelihood, st.y_bracket));
      density_acc.add(std::exp(mvn_log_pdf(likelihood, st.y_density)));

      kl_nw_acc.add(nw_log_pdf(st.p, draw.mean, draw.precision) -
                    nw_log_pdf(st.q, draw.mean, draw.precision));
      kl_wishart_acc.add(
          wishart_log_pdf(WishartParams{st.p.scale, st.p.nu}, draw.precision) -
          wishart_log_pdf(WishartParams{st.q.scale, st.q.nu}, draw.precision));

      const Eigen::VectorXd x = sample_mvn(st.mvn_p, rng);
      kl_mvn_acc.add(mvn_log_pdf(st.mvn_p, x) - mvn_log_pdf(st.mvn_q, x));
    }

    report.rows.push_back(make_row("predictive_entropy", k, s, cf_pred_entropy,
                                   pred_entropy_acc, threshold));
    report.rows.push_back(make_row("expected_data_entropy", k, s, cf_data_entropy,
                                   data_entropy_acc, threshold));
    report.rows.push_back(
        make_row("mutual_information", k, s, cf_mi, mi_acc, threshold));
    report.rows.push_back(make_row("epkl", k, s, cf_epkl, epkl_acc, threshold));

    // Total predictive variance: report the entry with the worst z.
    VerificationRow worst;
    for (int a = 0; a < k; ++a) {
      for (int b = 0; b < k; ++b) {
        const VerificationRow row = make_row(
            "total_variance", k, s, cf_total_var(a, b), var_at(a, b), threshold);
        if (a == 0 && b == 0) {
          worst = row;
        } else if (row.abs_z > worst.abs_z) {
          worst = row;
        }
      }
    }
    report.rows.push_back(worst);

    report.rows.push_back(
        make_row("rkl_expected_nll", k, s, cf_bracket, bracket_acc, threshold));
    report.rows.push_back(make_row("posterior_predictive_density", k, s,
                                   cf_density, density_acc, threshold));
    report.rows.push_back(make_row("kl_nw", k, s, cf_kl_nw, kl_nw_acc, threshold));
    report.rows.push_back(
        make_row("kl_wishart", k, s, cf_kl_wishart, kl_wishart_acc, threshold));
    report.rows.push_back(
        make_row("kl_mvn", k, s, cf_kl_mvn, kl_mvn_acc, threshold));
    log_debug("verification: setting " + std::to_string(s) + " done (k = " +
              std::to_string(k) + ")");
  }

  report.max_abs_z = 0.0;
  report.pass = true;
  for (const VerificationRow& row : report.rows) {
    report.max_abs_z = std::max(report.max_abs_z, row.abs_z);
    report.pass = report.pass && row.pass;
  }
  return report;
}

}  // namespace rpn
