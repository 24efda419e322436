// Tests for predictive metrics: RMSE, Gaussian / Student-T / mixture NLL,
// rejection curves with the prediction-rejection ratio under both
// conventions, and AUC-ROC including tie handling and order invariance.

#include <doctest.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rpn/distributions.hpp"
#include "rpn/eval.hpp"
#include "rpn/rng.hpp"

using namespace rpn;

namespace {

NormalParams gaussian1d(double mean, double precision) {
  Eigen::VectorXd m(1);
  m << mean;
  Eigen::MatrixXd p(1, 1);
  p << precision;
  return NormalParams{m, SymPd::from_dense(p)};
}

std::vector<double> random_values(int n, std::uint64_t seed, double lo, double hi) {
  Rng rng(seed);
  std::uniform_real_distribution<double> uni(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = uni(rng);
  return v;
}

}  // namespace

TEST_CASE("rmse is the root of the per-entry mean squared error") {
  Eigen::MatrixXd preds(2, 2), targets(2, 2);
  preds << 1, 2, 3, 4;
  targets << 0, 2, 3, 2;
  CHECK(rmse(preds, targets) == doctest::Approx(std::sqrt(1.25)).epsilon(1e-15));
  CHECK(rmse(preds, preds) == 0.0);
  CHECK_THROWS_AS((void)rmse(preds, Eigen::MatrixXd::Zero(2, 1)), std::invalid_argument);
  CHECK_THROWS_AS((void)rmse(Eigen::MatrixXd(), Eigen::MatrixXd()), std::invalid_argument);
}

TEST_CASE("predictive_nll agrees with the log densities") {
  Rng rng(5);
  std::normal_distribution<double> gauss(0.0, 1.0);

  SUBCASE("gaussian posterior") {
    const NormalParams p = gaussian1d(0.3, 2.0);
    Eigen::VectorXd y(1);
    y << -0.4;
    CHECK(predictive_nll(p, y) == doctest::Approx(-mvn_log_pdf(p, y)).epsilon(1e-15));
  }

  SUBCASE("student-t posterior") {
    Eigen::VectorXd loc(2);
    loc << 0.1, -0.2;
    Eigen::MatrixXd shape(2, 2);
    shape << 1.5, 0.2, 0.2, 0.8;
    const StudentTParams t{loc, SymPd::from_dense(shape), 4.3};
    Eigen::VectorXd y(2);
    y << 0.5, 0.9;
    CHECK(predictive_nll(t, y) == doctest::Approx(-t_log_pdf(t, y)).epsilon(1e-15));
  }

  SUBCASE("a single-member mixture equals the gaussian form") {
    const NormalParams p = gaussian1d(-1.0, 0.7);
    Eigen::VectorXd y(1);
    y << 0.2;
    CHECK(predictive_nll(std::vector<NormalParams>{p}, y) ==
          doctest::Approx(predictive_nll(p, y)).epsilon(1e-14));
  }

  SUBCASE("two equidistant unit members give the midpoint density") {
    const std::vector<NormalParams> mix{gaussian1d(0.0, 1.0), gaussian1d(2.0, 1.0)};
    Eigen::VectorXd y(1);
    y << 1.0;
    // Both members have density phi(1), so the mixture NLL is -ln phi(1).
    const double want = 0.5 * std::log(2.0 * M_PI) + 0.5;
    CHECK(predictive_nll(mix, y) == doctest::Approx(want).epsilon(1e-14));
  }

  SUBCASE("mixture NLL is bracketed by the best member") {
    for (int trial = 0; trial < 30; ++trial) {
      std::vector<NormalParams> mix;
      const int m = 4;
      for (int j = 0; j < m; ++j) {
        mix.push_back(gaussian1d(gauss(rng), 0.5 + std::abs(gauss(rng))));
      }
      Eigen::VectorXd y(1);
      y << gauss(rng);
      double best = predictive_nll(mix[0], y);
      for (int j = 1; j < m; ++j) best = std::min(best, predictive_nll(mix[j], y));
      const double nll = predictive_nll(mix, y);
      CHECK(nll >= best - 1e-12);
      CHECK(nll <= best + std::log(double(m)) + 1e-12);
    }
    CHECK_THROWS_AS((void)predictive_nll(std::vector<NormalParams>{}, Eigen::VectorXd::Zero(1)),
                    std::invalid_argument);
  }
}

TEST_CASE("rejection_curve satisfies its structural invariants") {
  const int n = 50;
  const std::vector<double> errors = random_values(n, 11, 0.0, 4.0);
  const std::vector<double> scores = random_values(n, 12, -1.0, 1.0);
  const RejectionCurve curve = rejection_curve(errors, scores);

  REQUIRE(curve.fractions.size() == n + 1);
  REQUIRE(curve.mass_error.size() == n + 1);
  REQUIRE(curve.mean_error.size() == n + 1);

  double mse = 0.0;
  for (double e : errors) mse += e;
  mse /= n;

  for (int r = 0; r <= n; ++r) {
    CHECK(curve.fractions(r) == doctest::Approx(double(r) / n).epsilon(1e-15));
  }
  CHECK(curve.mass_error(0) == doctest::Approx(mse).epsilon(1e-12));
  CHECK(curve.mean_error(0) == doctest::Approx(mse).epsilon(1e-12));
  CHECK(curve.mass_error(n) == 0.0);
  CHECK(curve.mean_error(n) == 0.0);

  // Retained mass never increases as more examples are rejected.
  for (int r = 1; r <= n; ++r) {
    CHECK(curve.mass_error(r) <= curve.mass_error(r - 1) + 1e-15);
  }

  // No ordering sheds error mass faster than the oracle.
  CHECK(curve.ar_oracle_mass >= curve.ar_uncertainty_mass - 1e-12);

  // Oracle ordering also yields a nonincreasing retained-set MSE.
  const RejectionCurve oracle = rejection_curve(errors, errors);
  for (int r = 1; r < n; ++r) {
    CHECK(oracle.mean_error(r) <= oracle.mean_error(r - 1) + 1e-12);
  }

  CHECK_THROWS_AS((void)rejection_curve(errors, random_values(n + 1, 1, 0, 1)),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)rejection_curve({1.0}, {1.0}), std::invalid_argument);
  CHECK_THROWS_AS((void)rejection_curve({1.0, -0.5}, {0.0, 1.0}), std::domain_error);
}

TEST_CASE("prr scores oracle, random, and adversarial orderings correctly") {
  const int n = 200;
  const std::vector<double> errors = random_values(n, 21, 0.0, 9.0);

  SUBCASE("the oracle ordering scores exactly one in both conventions") {
    const RejectionCurve curve = rejection_curve(errors, errors);
    CHECK(prr(curve, PrrConvention::kMassLine) == 1.0);
    CHECK(prr(curve, PrrConvention::kMeanFlat) == 1.0);
  }

  SUBCASE("random orderings score near zero on average") {
    Rng rng(22);
    std::vector<double> scores = random_values(n, 23, 0.0, 1.0);
    double total = 0.0;
    for (int shuffle = 0; shuffle < 100; ++shuffle) {
      for (int i = n - 1; i > 0; --i) {
        std::uniform_int_distribution<int> pick(0, i);
        std::swap(scores[i], scores[pick(rng)]);
      }
      total += prr(rejection_curve(errors, scores), PrrConvention::kMassLine);
    }
    CHECK(std::abs(total / 100.0) < 0.05);
  }

  SUBCASE("an anti-oracle ordering scores negative") {
    std::vector<double> anti(errors.size());
    for (std::size_t i = 0; i < errors.size(); ++i) anti[i] = -errors[i];
    CHECK(prr(rejection_curve(errors, anti), PrrConvention::kMassLine) < 0.0);
    CHECK(prr(rejection_curve(errors, anti), PrrConvention::kMeanFlat) < 0.0);
  }

  SUBCASE("prr is invariant under monotone transforms of the scores") {
    const std::vector<double> scores = random_values(n, 24, -2.0, 2.0);
    std::vector<double> warped(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) warped[i] = std::exp(scores[i]);
    CHECK(prr(rejection_curve(errors, scores)) ==
          prr(rejection_curve(errors, warped)));
  }

  SUBCASE("all-equal errors have no oracle signal") {
    const std::vector<double> flat(n, 2.0);
    const RejectionCurve curve = rejection_curve(flat, random_values(n, 25, 0, 1));
    CHECK_THROWS_AS((void)prr(curve), std::domain_error);
  }
}

TEST_CASE("auc_roc computes the exact Mann-Whitney statistic") {
  CHECK(auc_roc({1.0, 2.0}, {3.0, 4.0}) == 1.0);
  CHECK(auc_roc({3.0, 4.0}, {1.0, 2.0}) == 0.0);
  CHECK(auc_roc({1.0, 2.0}, {1.0, 2.0}) == 0.5);
  CHECK(auc_roc({1.0, 3.0}, {2.0, 4.0}) == doctest::Approx(0.75).epsilon(1e-15));
  // Ties count one half: pairs (1,1) 1/2, (1,2) 1, (1,1) 1/2, (1,2) 1.
  CHECK(auc_roc({1.0, 1.0}, {1.0, 2.0}) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK_THROWS_AS((void)auc_roc({}, {1.0}), std::invalid_argument);
  CHECK_THROWS_AS((void)auc_roc({1.0}, {}), std::invalid_argument);
}

TEST_CASE("auc_roc is invariant under strictly monotone transforms") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const std::vector<double> in = random_values(17, 1000 + seed, -3.0, 3.0);
    const std::vector<double> out = random_values(23, 2000 + seed, -2.0, 4.0);
    const double base = auc_roc(in, out);

    auto warp = [](const std::vector<double>& v, auto f) {
      std::vector<double> w(v.size());
      std::transform(v.begin(), v.end(), w.begin(), f);
      return w;
    };
    auto expf = [](double x) { return std::exp(x); };
    auto affine = [](double x) { return 2.0 * x + 3.0; };
    CHECK(auc_roc(warp(in, expf), warp(out, expf)) == base);
    CHECK(auc_roc(warp(in, affine), warp(out, affine)) == base);
  }
}

TEST_CASE("curve_to_csv emits the fraction/error table") {
  const std::vector<double> errors{4.0, 1.0, 0.0, 9.0};
  const std::vector<double> scores{2.0, 1.0, 0.0, 3.0};
  const RejectionCurve curve = rejection_curve(errors, scores);

  const std::string csv = curve_to_csv(curve);
  REQUIRE(csv.rfind("rejection_fraction,error\n", 0) == 0);

  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);  // header
  int rows = 0;
  double first_error = -1.0;
  while (std::getline(is, line)) {
    const auto comma = line.find(',');
    REQUIRE(comma != std::string::npos);
    const double frac = std::stod(line.substr(0, comma));
    const double err = std::stod(line.substr(comma + 1));
    if (rows == 0) first_error = err;
    CHECK(frac == doctest::Approx(rows / 4.0).epsilon(1e-12));
    CHECK(err >= 0.0);
    ++rows;
  }
  CHECK(rows == 5);
  CHECK(first_error == doctest::Approx(3.5).epsilon(1e-12));  // MSE of the errors

  // The mean-flat convention writes the retained-set MSE column instead.
  const std::string mean_csv = curve_to_csv(curve, PrrConvention::kMeanFlat);
  CHECK(mean_csv != csv);
  CHECK(mean_csv.rfind("rejection_fraction,error\n", 0) == 0);
}
