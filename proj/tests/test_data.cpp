// Tests for dataset plumbing: the synthetic benchmark's generating law,
// factor-analysis fitting and OOD sampling, delimited-text ingestion,
// standardization, k-fold splitting, input noise, and the JSON container.

#include <doctest.h>

#include <Eigen/Dense>

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "rpn/data.hpp"
#include "rpn/errors.hpp"
#include "rpn/rng.hpp"

using namespace rpn;

TEST_CASE("synth_generate follows the sin-wave generating law") {
  const int n = 40000;
  const Dataset d = synth_generate(n, 5);
  REQUIRE(d.n() == n);
  REQUIRE(d.input_dim() == 1);
  REQUIRE(d.target_dim() == 1);

  // Inputs are uniform on [-10, 10].
  CHECK(d.inputs.minCoeff() >= -10.0);
  CHECK(d.inputs.maxCoeff() <= 10.0);
  CHECK(std::abs(d.inputs.mean()) < 0.15);

  // Standardized residuals against the generating mean/variance are ~N(0,1).
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = d.inputs(i, 0);
    const double z = (d.targets(i, 0) - synth_mean(x)) / std::sqrt(synth_variance(x));
    sum += z;
    sum_sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.02);
  CHECK(sum_sq / n == doctest::Approx(1.0).epsilon(0.03));

  // The generating law itself.
  CHECK(synth_mean(2.0) == doctest::Approx(std::sin(2.0) + 0.2).epsilon(1e-15));
  CHECK(synth_variance(2.0) == doctest::Approx(1.0 / 3.0 + 0.01).epsilon(1e-15));
  CHECK(synth_variance(0.0) == doctest::Approx(1.01).epsilon(1e-15));
  CHECK(synth_variance(-4.0) == synth_variance(4.0));

  // Deterministic per seed.
  const Dataset again = synth_generate(200, 7);
  const Dataset same = synth_generate(200, 7);
  CHECK(again.inputs == same.inputs);
  CHECK(again.targets == same.targets);
  CHECK_THROWS_AS((void)synth_generate(0, 1), std::invalid_argument);
}

TEST_CASE("synth_ood draws from the two flanking intervals with equal mass") {
  const int n = 20000;
  const Dataset d = synth_ood(n, 9);
  REQUIRE(d.n() == n);
  CHECK_FALSE(d.has_targets());
  int negative = 0;
  for (int i = 0; i < n; ++i) {
    const double x = d.inputs(i, 0);
    const double a = std::abs(x);
    CHECK(a >= 20.0);
    CHECK(a <= 25.0);
    if (x < 0.0) ++negative;
  }
  const double frac = static_cast<double>(negative) / n;
  CHECK(frac > 0.46);
  CHECK(frac < 0.54);
  CHECK_THROWS_AS((void)synth_ood(0, 1), std::invalid_argument);
}

TEST_CASE("factor analysis recovers a known low-rank covariance") {
  Rng rng(42);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int dim = 6, latent = 2, n = 10000;

  Eigen::MatrixXd w_true(dim, latent);
  for (int r = 0; r < dim; ++r) {
    for (int c = 0; c < latent; ++c) w_true(r, c) = gauss(rng);
  }
  Eigen::VectorXd noise_true(dim), mu_true(dim);
  for (int r = 0; r < dim; ++r) {
    noise_true(r) = 0.1 + 0.4 * (r / static_cast<double>(dim - 1));
    mu_true(r) = gauss(rng);
  }

  Eigen::MatrixXd x(n, dim);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd z(latent);
    for (int c = 0; c < latent; ++c) z(c) = gauss(rng);
    for (int r = 0; r < dim; ++r) {
      x(i, r) = mu_true(r) + w_true.row(r).dot(z) +
                std::sqrt(noise_true(r)) * gauss(rng);
    }
  }

  const FactorAnalysisModel model = fa_fit(x, latent, 300, 13);
  REQUIRE(model.loadings.rows() == dim);
  REQUIRE(model.loadings.cols() == latent);

  // The EM log-likelihood trace never decreases.
  REQUIRE(!model.log_likelihoods.empty());
  for (std::size_t i = 1; i < model.log_likelihoods.size(); ++i) {
    CHECK(model.log_likelihoods[i] >=
          model.log_likelihoods[i - 1] - 1e-8 * std::abs(model.log_likelihoods[i - 1]));
  }

  // Mean and covariance recovery (the loadings themselves are only
  // identified up to rotation, the covariance is not).
  const Eigen::MatrixXd cov_true =
      w_true * w_true.transpose() + noise_true.asDiagonal().toDenseMatrix();
  const Eigen::MatrixXd cov_fit = model.covariance();
  CHECK((model.mean - mu_true).cwiseAbs().maxCoeff() < 0.1);
  CHECK((cov_fit - cov_true).norm() / cov_true.norm() < 0.05);

  CHECK_THROWS_AS((void)fa_fit(x, 0, 10, 1), std::invalid_argument);
  CHECK_THROWS_AS((void)fa_fit(x, dim + 1, 10, 1), std::invalid_argument);
  CHECK_THROWS_AS((void)fa_fit(Eigen::MatrixXd::Zero(4, 6), 2, 10, 1),
                  std::invalid_argument);
}

TEST_CASE("fa_sample_ood draws from the scaled model covariance") {
  FactorAnalysisModel model;
  model.loadings = Eigen::MatrixXd(2, 1);
  model.loadings << 1.0, -0.5;
  model.mean = Eigen::VectorXd(2);
  model.mean << 3.0, -1.0;
  model.noise = Eigen::VectorXd(2);
  model.noise << 0.5, 0.3;

  const double scale = 4.0;
  const int n = 30000;
  const Dataset d = fa_sample_ood(model, n, scale, 17);
  REQUIRE(d.n() == n);
  REQUIRE(d.input_dim() == 2);
  CHECK_FALSE(d.has_targets());

  const Eigen::VectorXd mean = d.inputs.colwise().mean();
  CHECK((mean - model.mean).cwiseAbs().maxCoeff() < 0.08);

  const Eigen::MatrixXd centered = d.inputs.rowwise() - mean.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / double(n - 1);
  const Eigen::MatrixXd want = scale * model.covariance();
  CHECK((cov - want).norm() / want.norm() < 0.05);

  CHECK_THROWS_AS((void)fa_sample_ood(model, 0, 1.0, 1), std::invalid_argument);
  CHECK_THROWS_AS((void)fa_sample_ood(model, 10, 0.0, 1), std::domain_error);
}

TEST_CASE("csv ingestion parses exactly and applies the processing order") {
  const std::string text = "a,b,target\n1,2,3\n4,5,6\n7,8,9\n";
  CsvSchema schema;

  SUBCASE("defaults: header, comma, last column is the target") {
    const Dataset d = csv_ingest_text(text, schema);
    REQUIRE(d.n() == 3);
    REQUIRE(d.input_dim() == 2);
    Eigen::MatrixXd want_x(3, 2);
    want_x << 1, 2, 4, 5, 7, 8;
    Eigen::MatrixXd want_y(3, 1);
    want_y << 3, 6, 9;
    CHECK(d.inputs == want_x);
    CHECK(d.targets == want_y);
  }

  SUBCASE("explicit target column keeps remaining features in order") {
    schema.target_column = 0;
    const Dataset d = csv_ingest_text(text, schema);
    Eigen::MatrixXd want_x(3, 2);
    want_x << 2, 3, 5, 6, 8, 9;
    CHECK(d.inputs == want_x);
    CHECK(d.targets(1, 0) == 4.0);
  }

  SUBCASE("semicolon delimiter without a header") {
    CsvSchema s;
    s.has_header = false;
    s.delimiter = ';';
    const Dataset d = csv_ingest_text("1;2\n3;4\n", s);
    REQUIRE(d.n() == 2);
    CHECK(d.inputs(1, 0) == 3.0);
    CHECK(d.targets(1, 0) == 4.0);
  }

  SUBCASE("constant feature columns are dropped by default") {
    const std::string with_const = "a,b,c,y\n1,5,2,0\n3,5,4,1\n";
    const Dataset d = csv_ingest_text(with_const, schema);
    REQUIRE(d.input_dim() == 2);  // column b dropped
    CHECK(d.inputs(0, 0) == 1.0);
    CHECK(d.inputs(0, 1) == 2.0);

    CsvSchema keep = schema;
    keep.drop_constant_columns = false;
    CHECK(csv_ingest_text(with_const, keep).input_dim() == 3);
  }

  SUBCASE("row and feature truncation") {
    schema.take_first_rows = 2;
    schema.take_first_features = 1;
    const Dataset d = csv_ingest_text(text, schema);
    REQUIRE(d.n() == 2);
    REQUIRE(d.input_dim() == 1);
    CHECK(d.inputs(1, 0) == 4.0);
    CHECK(d.targets(1, 0) == 6.0);
  }

  SUBCASE("target-free ingestion keeps every column") {
    CsvSchema s;
    s.has_target = false;
    s.drop_constant_columns = false;
    const Dataset d = csv_ingest_text(text, s);
    REQUIRE(d.input_dim() == 3);
    CHECK_FALSE(d.has_targets());
  }

  SUBCASE("parse errors carry 1-based coordinates") {
    try {
      (void)csv_ingest_text("a,b\n1,x\n", schema);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      const std::string what = e.what();
      CHECK(what.find("row 2") != std::string::npos);
      CHECK(what.find("2") != std::string::npos);
    }
    CHECK_THROWS_AS((void)csv_ingest_text("a,b\n1,nan\n", schema), ParseError);
    CHECK_THROWS_AS((void)csv_ingest_text("a,b\n1,2\n3\n", schema), ParseError);
    CHECK_THROWS_AS((void)csv_ingest_text("", schema), ParseError);
    CHECK_THROWS_AS((void)csv_ingest_text("a,b\n", schema), ParseError);
    CHECK_THROWS_AS((void)csv_ingest_text("solo\n1\n2\n", schema), ParseError);
    CsvSchema bad = schema;
    bad.target_column = 7;
    CHECK_THROWS_AS((void)csv_ingest_text(text, bad), std::invalid_argument);
  }

  SUBCASE("file-based ingestion records the path as provenance") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "rpn_data_test";
    fs::create_directories(dir);
    const std::string path = (dir / "tiny.csv").string();
    {
      std::ofstream out(path);
      out << text;
    }
    const Dataset d = csv_ingest(path, schema);
    CHECK(d.provenance == path);
    CHECK(d.n() == 3);
    fs::remove_all(dir);
  }
}

TEST_CASE("standardize uses train statistics everywhere") {
  Rng rng(23);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Dataset train, test;
  train.inputs = Eigen::MatrixXd(50, 3);
  train.targets = Eigen::MatrixXd(50, 1);
  test.inputs = Eigen::MatrixXd(20, 3);
  test.targets = Eigen::MatrixXd(20, 1);
  for (int i = 0; i < 50; ++i) {
    for (int c = 0; c < 3; ++c) train.inputs(i, c) = 5.0 * gauss(rng) + c;
    train.targets(i, 0) = 3.0 * gauss(rng) - 7.0;
  }
  for (int i = 0; i < 20; ++i) {
    for (int c = 0; c < 3; ++c) test.inputs(i, c) = 5.0 * gauss(rng) + c;
    test.targets(i, 0) = 3.0 * gauss(rng) - 7.0;
  }
  train.inputs.col(2).setConstant(4.0);  // degenerate feature

  const Dataset train_orig = train;
  const Dataset test_orig = test;
  const StandardizeResult out = standardize(train, {test});
  REQUIRE(out.others.size() == 1);

  // Train columns have mean 0 and unit sample std (constant column: zeros).
  for (int c = 0; c < 2; ++c) {
    const auto col = out.train.inputs.col(c);
    CHECK(std::abs(col.mean()) < 1e-12);
    const double var = (col.array() - col.mean()).square().sum() / 49.0;
    CHECK(var == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(out.train.inputs.col(2).cwiseAbs().maxCoeff() == 0.0);

  // The test set is transformed with the train statistics.
  const ColumnStats& stats = out.train.input_stats;
  REQUIRE(stats.valid());
  for (int i = 0; i < 20; ++i) {
    for (int c = 0; c < 3; ++c) {
      const double want = (test_orig.inputs(i, c) - stats.mean(c)) / stats.std(c);
      CHECK(out.others[0].inputs(i, c) == doctest::Approx(want).epsilon(1e-14));
    }
  }
  CHECK(out.others[0].input_stats.mean == stats.mean);

  // Target destandardization inverts the transform, one prediction at a time.
  Eigen::VectorXd back(50);
  for (int i = 0; i < 50; ++i) {
    back(i) = destandardize_targets(out.train.target_stats,
                                    out.train.targets.row(i).transpose())(0);
  }
  CHECK((back - train_orig.targets.col(0)).cwiseAbs().maxCoeff() < 1e-9);

  // with_targets = false leaves targets untouched.
  const StandardizeResult raw = standardize(train_orig, {}, false);
  CHECK(raw.train.targets == train_orig.targets);
  CHECK_FALSE(raw.train.target_stats.valid());

  CHECK_THROWS_AS((void)standardize(Dataset{}, {}), std::invalid_argument);
  CHECK_THROWS_AS(
      (void)destandardize_targets(out.train.input_stats, Eigen::VectorXd::Zero(2)),
      std::invalid_argument);
}

TEST_CASE("kfold produces disjoint shuffled folds covering every row") {
  const int n = 103, k = 10;
  const auto folds = kfold_indices(n, k, 77);
  REQUIRE(folds.size() == static_cast<std::size_t>(k));

  std::set<int> seen;
  for (const auto& [train_idx, test_idx] : folds) {
    CHECK(train_idx.size() + test_idx.size() == static_cast<std::size_t>(n));
    CHECK(test_idx.size() >= 10);
    CHECK(test_idx.size() <= 11);
    std::set<int> train_set(train_idx.begin(), train_idx.end());
    for (int i : test_idx) {
      CHECK(train_set.count(i) == 0);
      CHECK(seen.insert(i).second);  // each row tested exactly once
    }
  }
  CHECK(seen.size() == static_cast<std::size_t>(n));
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == n - 1);

  // Deterministic per seed, shuffled across seeds.
  CHECK(kfold_indices(n, k, 77) == folds);
  CHECK(kfold_indices(n, k, 78) != folds);

  CHECK_THROWS_AS((void)kfold_indices(10, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS((void)kfold_indices(3, 4, 1), std::invalid_argument);

  // Dataset-level kfold matches select_rows on the same index folds.
  Dataset d;
  d.inputs = Eigen::MatrixXd::Random(n, 2);
  d.targets = Eigen::MatrixXd::Random(n, 1);
  const std::vector<DatasetSplit> splits = kfold(d, k, 77);
  REQUIRE(splits.size() == static_cast<std::size_t>(k));
  for (int f = 0; f < k; ++f) {
    const Dataset want_train = select_rows(d, folds[f].first);
    const Dataset want_test = select_rows(d, folds[f].second);
    CHECK(splits[f].train.inputs == want_train.inputs);
    CHECK(splits[f].train.targets == want_train.targets);
    CHECK(splits[f].test.inputs == want_test.inputs);
    CHECK(splits[f].test.targets == want_test.targets);
  }
}

TEST_CASE("select_rows picks rows in index order") {
  Dataset d;
  d.inputs = Eigen::MatrixXd(4, 2);
  d.inputs << 1, 2, 3, 4, 5, 6, 7, 8;
  d.targets = Eigen::MatrixXd(4, 1);
  d.targets << 10, 20, 30, 40;
  const Dataset picked = select_rows(d, {3, 0, 2});
  REQUIRE(picked.n() == 3);
  CHECK(picked.inputs(0, 0) == 7.0);
  CHECK(picked.inputs(1, 0) == 1.0);
  CHECK(picked.targets(2, 0) == 30.0);
  CHECK_THROWS_AS((void)select_rows(d, {4}), std::invalid_argument);
  CHECK_THROWS_AS((void)select_rows(d, {-1}), std::invalid_argument);
}

TEST_CASE("gaussian_input_noise perturbs inputs only") {
  Dataset d;
  d.inputs = Eigen::MatrixXd::Random(10000, 2);
  d.targets = Eigen::MatrixXd::Random(10000, 1);

  const Dataset same = gaussian_input_noise(d, 0.0, 3);
  CHECK(same.inputs == d.inputs);
  CHECK(same.targets == d.targets);

  const double sigma = 0.7;
  const Dataset noisy = gaussian_input_noise(d, sigma, 3);
  CHECK(noisy.targets == d.targets);
  const Eigen::MatrixXd diff = noisy.inputs - d.inputs;
  CHECK(std::abs(diff.mean()) < 0.02);
  const double var = (diff.array() - diff.mean()).square().sum() / (diff.size() - 1.0);
  CHECK(std::sqrt(var) == doctest::Approx(sigma).epsilon(0.03));

  CHECK_THROWS_AS((void)gaussian_input_noise(d, -0.1, 3), std::domain_error);
}

TEST_CASE("dataset JSON container round-trips bitwise") {
  Rng rng(31);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Dataset d;
  d.inputs = Eigen::MatrixXd(7, 3);
  d.targets = Eigen::MatrixXd(7, 2);
  for (int i = 0; i < 7; ++i) {
    for (int c = 0; c < 3; ++c) d.inputs(i, c) = gauss(rng) * 1e3;
    for (int c = 0; c < 2; ++c) d.targets(i, c) = gauss(rng) / 3.0;
  }
  d.provenance = "unit-test";
  const StandardizeResult std_out = standardize(d, {});
  const Dataset& with_stats = std_out.train;

  const Dataset back = dataset_from_json(dataset_to_json(with_stats));
  CHECK(back.inputs == with_stats.inputs);
  CHECK(back.targets == with_stats.targets);
  CHECK(back.provenance == with_stats.provenance);
  REQUIRE(back.input_stats.valid());
  CHECK(back.input_stats.mean == with_stats.input_stats.mean);
  CHECK(back.input_stats.std == with_stats.input_stats.std);
  CHECK(back.target_stats.mean == with_stats.target_stats.mean);

  // Input-only dataset.
  Dataset inputs_only;
  inputs_only.inputs = Eigen::MatrixXd::Random(4, 2);
  const Dataset back2 = dataset_from_json(dataset_to_json(inputs_only));
  CHECK(back2.inputs == inputs_only.inputs);
  CHECK_FALSE(back2.has_targets());

  // Corrupt containers.
  CHECK_THROWS_AS((void)dataset_from_json("not json"), ParseError);
  nlohmann::json j = nlohmann::json::parse(dataset_to_json(inputs_only));
  j["format"] = "other";
  CHECK_THROWS_AS((void)dataset_from_json(j.dump()), ParseError);
  j = nlohmann::json::parse(dataset_to_json(inputs_only));
  j["version"] = 99;
  CHECK_THROWS_AS((void)dataset_from_json(j.dump()), ParseError);
}
