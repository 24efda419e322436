#pragma once

// Dataset plumbing: the synthetic sin-wave benchmark, factor-analysis OOD
// generation, delimited-text ingestion, train-statistics standardization,
// k-fold splitting, and a versioned JSON dataset container.

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rpn/errors.hpp"
#include "rpn/rng.hpp"
#include "rpn/sympd.hpp"

namespace rpn {

// Per-column statistics captured when a dataset is standardized; std is
// stored after the 1e-8 floor so applying the inverse transform is exact.
struct ColumnStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;
  bool valid() const { return mean.size() > 0; }
};

struct Dataset {
  Eigen::MatrixXd inputs;    // N x D
  Eigen::MatrixXd targets;   // N x K; 0 x 0 for input-only sets
  ColumnStats input_stats;   // train statistics used to standardize (if any)
  ColumnStats target_stats;
  std::string provenance;

  Eigen::Index n() const { return inputs.rows(); }
  Eigen::Index input_dim() const { return inputs.cols(); }
  Eigen::Index target_dim() const { return targets.cols(); }
  bool has_targets() const { return targets.size() > 0; }
};

// ---- synthetic benchmark ----

// x ~ U[-10, 10]; y ~ N(sin x + x/10, 1/(|x|+1) + 0.01).
Dataset synth_generate(int n, std::uint64_t seed);
// Generating mean/variance of the synthetic target at input x.
double synth_mean(double x);
double synth_variance(double x);

// Inputs uniform over [-25, -20] union [20, 25] with equal mass.
Dataset synth_ood(int n, std::uint64_t seed);

// ---- factor-analysis OOD model ----

struct FactorAnalysisModel {
  Eigen::MatrixXd loadings;  // D x d
  Eigen::VectorXd mean;      // D
  Eigen::VectorXd noise;     // D diagonal variances, floored at 1e-6
  std::vector<double> log_likelihoods;  // per-EM-iteration trace

  Eigen::MatrixXd covariance() const;  // W W^T + diag(noise)
};

// EM fit of N(mu, W W^T + Psi) to the rows of x; stops early when the
// relative log-likelihood gain drops below 1e-6.
FactorAnalysisModel fa_fit(const Eigen::MatrixXd& x, int latent_dim, int iters,
                           std::uint64_t seed);

// Draws n inputs from N(mu, scale * (W W^T + Psi)).
Dataset fa_sample_ood(const FactorAnalysisModel& model, int n, double scale,
                      std::uint64_t seed);

// ---- delimited-text ingestion ----

struct CsvSchema {
  bool has_header = true;
  char delimiter = ',';
  int target_column = -1;   // original column index; -1 means the last column
  bool drop_constant_columns = true;
  int take_first_rows = -1;      // keep only the first R rows (-1 = all)
  int take_first_features = -1;  // keep only the first F feature columns (-1 = all)
  bool has_target = true;        // false ingests every column as features
};

// Parses a numeric delimited file.  Processing order: parse -> keep first
// rows -> split off the target column -> keep first feature columns ->
// drop constant feature columns.  Non-numeric or NaN cells raise ParseError
// with 1-based row/column coordinates.
Dataset csv_ingest(const std::string& path, const CsvSchema& schema);
Dataset csv_ingest_text(const std::string& text, const CsvSchema& schema,
                        const std::string& origin = "<memory>");

// ---- standardization and splitting ----

struct StandardizeResult {
  Dataset train;
  std::vector<Dataset> others;
};

// Standardizes inputs (and targets when with_targets and present) of the
// train set and every other set with TRAIN column statistics; std floor
// 1e-8.  The stats are recorded on every returned dataset.
StandardizeResult standardize(const Dataset& train,
                              const std::vector<Dataset>& others,
                              bool with_targets = true);

// Undo target standardization on a column vector of model outputs.
Eigen::VectorXd destandardize_targets(const ColumnStats& stats,
                                      const Eigen::VectorXd& standardized);

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

// Disjoint shuffled index folds whose union is 0..n-1; deterministic per seed.
std::vector<std::pair<std::vector<int>, std::vector<int>>> kfold_indices(
    int n, int k, std::uint64_t seed);
std::vector<DatasetSplit> kfold(const Dataset& dataset, int k, std::uint64_t seed);

// Rows of the dataset selected by index, in order.
Dataset select_rows(const Dataset& dataset, const std::vector<int>& indices);

// Adds N(0, sigma^2 I) noise to inputs; targets untouched.
Dataset gaussian_input_noise(const Dataset& dataset, double sigma,
                             std::uint64_t seed);

// ---- versioned JSON container; round-trips exactly ----
std::string dataset_to_json(const Dataset& dataset);
Dataset dataset_from_json(const std::string& text);

}  // namespace rpn
