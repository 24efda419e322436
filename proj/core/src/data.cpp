#include "rpn/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "rpn/nn.hpp"

namespace rpn {
namespace {

constexpr double kStdFloor = 1e-8;
constexpr double kNoiseFloor = 1e-6;

std::vector<double> flatten_row_major(const Eigen::MatrixXd& m) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  }
  return out;
}

Eigen::MatrixXd unflatten_row_major(const std::vector<double>& v,
                                    Eigen::Index rows, Eigen::Index cols) {
  if (static_cast<Eigen::Index>(v.size()) != rows * cols) {
    throw ParseError("dataset container: value count does not match shape");
  }
  Eigen::MatrixXd m(rows, cols);
  std::size_t i = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = v[i++];
  }
  return m;
}

ColumnStats compute_stats(const Eigen::MatrixXd& m) {
  ColumnStats stats;
  stats.mean = m.colwise().mean();
  stats.std = Eigen::VectorXd::Constant(m.cols(), kStdFloor);
  if (m.rows() > 1) {
    const Eigen::MatrixXd centered = m.rowwise() - stats.mean.transpose();
    const Eigen::VectorXd var =
        centered.colwise().squaredNorm() / static_cast<double>(m.rows() - 1);
    stats.std = var.array().sqrt().max(kStdFloor);
  }
  return stats;
}

Eigen::MatrixXd apply_stats(const ColumnStats& stats, const Eigen::MatrixXd& m) {
  if (m.cols() != stats.mean.size()) {
    throw std::invalid_argument("standardize: column count mismatch");
  }
  Eigen::MatrixXd out = m.rowwise() - stats.mean.transpose();
  out.array().rowwise() /= stats.std.transpose().array();
  return out;
}

}  // namespace

double synth_mean(double x) { return std::sin(x) + x / 10.0; }
double synth_variance(double x) { return 1.0 / (std::abs(x) + 1.0) + 0.01; }

Dataset synth_generate(int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("synth_generate: n must be >= 1");
  Rng rng(seed);
  std::uniform_real_distribution<double> ux(-10.0, 10.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Dataset d;
  d.inputs.resize(n, 1);
  d.targets.resize(n, 1);
  for (int i = 0; i < n; ++i) {
    const double x = ux(rng);
    d.inputs(i, 0) = x;
    d.targets(i, 0) = synth_mean(x) + std::sqrt(synth_variance(x)) * gauss(rng);
  }
  d.provenance = "synthetic";
  return d;
}

Dataset synth_ood(int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("synth_ood: n must be >= 1");
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Dataset d;
  d.inputs.resize(n, 1);
  d.targets.resize(0, 0);
  for (int i = 0; i < n; ++i) {
    const bool left = unit(rng) < 0.5;
    const double u = unit(rng);
    d.inputs(i, 0) = left ? -25.0 + 5.0 * u : 20.0 + 5.0 * u;
  }
  d.provenance = "synthetic-ood";
  return d;
}

Eigen::MatrixXd FactorAnalysisModel::covariance() const {
  Eigen::MatrixXd cov = loadings * loadings.transpose();
  cov.diagonal() += noise;
  return cov;
}

FactorAnalysisModel fa_fit(const Eigen::MatrixXd& x, int latent_dim, int iters,
                           std::uint64_t seed) {
  const auto n = x.rows();
  const auto dim = x.cols();
  if (latent_dim < 1) throw std::invalid_argument("fa_fit: latent_dim must be >= 1");
  if (latent_dim > dim) {
    throw std::invalid_argument("fa_fit: latent_dim exceeds the data dimension");
  }
  if (n <= dim) throw std::invalid_argument("fa_fit: need more rows than columns");
  if (iters < 1) throw std::invalid_argument("fa_fit: iters must be >= 1");

  FactorAnalysisModel model;
  model.mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - model.mean.transpose();
  const Eigen::MatrixXd s = centered.transpose() * centered / static_cast<double>(n);

  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double init_scale =
      std::sqrt(std::max(s.trace() / static_cast<double>(dim * latent_dim), kNoiseFloor));
  model.loadings.resize(dim, latent_dim);
  for (Eigen::Index r = 0; r < dim; ++r) {
    for (int c = 0; c < latent_dim; ++c) model.loadings(r, c) = init_scale * gauss(rng);
  }
  model.noise = s.diagonal().cwiseMax(kNoiseFloor);

  const double half_norm = 0.5 * dim * std::log(2.0 * M_PI);
  auto log_likelihood = [&]() {
    const SymPd sigma = SymPd::from_dense(model.covariance());
    const double fit = 0.5 * sigma.solve(s).trace();
    return -static_cast<double>(n) * (half_norm + 0.5 * sigma.log_det() + fit);
  };

  for (int iter = 0; iter < iters; ++iter) {
    model.log_likelihoods.push_back(log_likelihood());
    if (iter >= 1) {
      const double prev = model.log_likelihoods[iter - 1];
      const double gain = model.log_likelihoods[iter] - prev;
      if (gain < 1e-6 * (std::abs(prev) + 1e-12)) break;
    }
    // E-step moments in the Rubin–Thayer covariance form.
    const Eigen::MatrixXd delta =
        model.noise.cwiseInverse().asDiagonal() * model.loadings;  // Psi^{-1} W
    const Eigen::MatrixXd g =
        (Eigen::MatrixXd::Identity(latent_dim, latent_dim) +
         model.loadings.transpose() * delta)
            .llt()
            .solve(Eigen::MatrixXd::Identity(latent_dim, latent_dim));
    const Eigen::MatrixXd beta = g * delta.transpose();      // d x D
    const Eigen::MatrixXd s_beta_t = s * beta.transpose();   // D x d
    const Eigen::MatrixXd second = g + beta * s_beta_t;      // E[z z^T]
    // M-step.
    const Eigen::MatrixXd loadings_new =
        second.llt().solve(s_beta_t.transpose()).transpose();
    model.noise = (s.diagonal() -
                   (loadings_new * (beta * s)).diagonal())
                      .cwiseMax(kNoiseFloor);
    model.loadings = loadings_new;
  }
  model.log_likelihoods.push_back(log_likelihood());
  return model;
}

Dataset fa_sample_ood(const FactorAnalysisModel& model, int n, double scale,
                      std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("fa_sample_ood: n must be >= 1");
  if (!(scale > 0.0)) throw std::domain_error("fa_sample_ood: scale must be positive");
  const auto dim = model.mean.size();
  const Eigen::MatrixXd chol =
      SymPd::from_dense(scale * model.covariance()).cholesky();
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Dataset d;
  d.inputs.resize(n, dim);
  d.targets.resize(0, 0);
  Eigen::VectorXd z(dim);
  for (int i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < dim; ++j) z(j) = gauss(rng);
    d.inputs.row(i) = (model.mean + chol * z).transpose();
  }
  d.provenance = "fa-ood";
  return d;
}

// ---- delimited-text ingestion ----

namespace {

std::vector<std::string> split_line(const std::string& line, char delimiter) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delimiter, start);
    if (pos == std::string::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return cells;
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\"");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\"");
  return s.substr(first, last - first + 1);
}

double parse_cell(const std::string& cell, std::size_t row, std::size_t col) {
  const std::string t = trim(cell);
  auto fail = [&](const char* what) {
    return ParseError(std::string("csv: ") + what + " at row " +
                      std::to_string(row) + ", column " + std::to_string(col));
  };
  if (t.empty()) throw fail("empty cell");
  double value = 0.0;
  const auto* begin = t.data();
  const auto* end = t.data() + t.size();
  const auto result = std::from_chars(begin, end, value);
  if (result.ec != std::errc{} || result.ptr != end) throw fail("non-numeric cell");
  if (!std::isfinite(value)) throw fail("non-finite cell");
  return value;
}

}  // namespace

Dataset csv_ingest_text(const std::string& text, const CsvSchema& schema,
                        const std::string& origin) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t pos = text.find('\n', start);
    if (pos == std::string::npos) pos = text.size();
    std::string line = text.substr(start, pos - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(std::move(line));
    if (pos == text.size()) break;
    start = pos + 1;
  }
  std::size_t first_data = 0;
  if (schema.has_header) {
    if (lines.empty()) throw ParseError("csv: missing header line in " + origin);
    first_data = 1;
  }
  if (first_data >= lines.size()) throw ParseError("csv: no data rows in " + origin);

  std::vector<std::vector<double>> rows;
  std::size_t width = 0;
  for (std::size_t li = first_data; li < lines.size(); ++li) {
    const std::size_t row_number = li + 1;  // 1-based, counting the header
    const std::vector<std::string> cells = split_line(lines[li], schema.delimiter);
    if (rows.empty()) {
      width = cells.size();
    } else if (cells.size() != width) {
      throw ParseError("csv: row " + std::to_string(row_number) + " has " +
                       std::to_string(cells.size()) + " cells, expected " +
                       std::to_string(width));
    }
    std::vector<double> row;
    row.reserve(width);
    for (std::size_t c = 0; c < cells.size(); ++c) {
      row.push_back(parse_cell(cells[c], row_number, c + 1));
    }
    rows.push_back(std::move(row));
    if (schema.take_first_rows > 0 &&
        rows.size() == static_cast<std::size_t>(schema.take_first_rows)) {
      break;
    }
  }

  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto total_cols = static_cast<Eigen::Index>(width);
  if (schema.has_target && total_cols < 2) {
    throw ParseError("csv: need at least two columns to split off a target");
  }

  Eigen::Index target_col = -1;
  if (schema.has_target) {
    target_col = schema.target_column < 0 ? total_cols - 1 : schema.target_column;
    if (target_col >= total_cols) {
      throw std::invalid_argument("csv_ingest: target_column out of range");
    }
  }

  Dataset d;
  d.provenance = origin;
  const Eigen::Index n_features = schema.has_target ? total_cols - 1 : total_cols;
  Eigen::MatrixXd features(n, n_features);
  if (schema.has_target) d.targets.resize(n, 1);
  for (Eigen::Index r = 0; r < n; ++r) {
    Eigen::Index fc = 0;
    for (Eigen::Index c = 0; c < total_cols; ++c) {
      if (c == target_col) {
        d.targets(r, 0) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      } else {
        features(r, fc++) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      }
    }
  }

  if (schema.take_first_features > 0 && schema.take_first_features < features.cols()) {
    features = features.leftCols(schema.take_first_features).eval();
  }
  if (schema.drop_constant_columns) {
    std::vector<Eigen::Index> keep;
    for (Eigen::Index c = 0; c < features.cols(); ++c) {
      if (features.col(c).maxCoeff() > features.col(c).minCoeff()) keep.push_back(c);
    }
    Eigen::MatrixXd pruned(n, static_cast<Eigen::Index>(keep.size()));
    for (std::size_t i = 0; i < keep.size(); ++i) pruned.col(i) = features.col(keep[i]);
    features = std::move(pruned);
  }
  if (features.cols() == 0) throw ParseError("csv: no feature columns remain");
  d.inputs = std::move(features);
  return d;
}

Dataset csv_ingest(const std::string& path, const CsvSchema& schema) {
  return csv_ingest_text(load_text_file(path), schema, path);
}

// ---- standardization and splitting ----

StandardizeResult standardize(const Dataset& train,
                              const std::vector<Dataset>& others,
                              bool with_targets) {
  if (train.n() < 1) throw std::invalid_argument("standardize: empty train set");
  StandardizeResult result;
  const ColumnStats input_stats = compute_stats(train.inputs);
  const bool do_targets = with_targets && train.has_targets();
  const ColumnStats target_stats = do_targets ? compute_stats(train.targets) : ColumnStats{};

  auto transform = [&](const Dataset& src) {
    Dataset out = src;
    out.inputs = apply_stats(input_stats, src.inputs);
    out.input_stats = input_stats;
    if (do_targets && src.has_targets()) {
      out.targets = apply_stats(target_stats, src.targets);
      out.target_stats = target_stats;
    }
    return out;
  };
  result.train = transform(train);
  result.others.reserve(others.size());
  for (const Dataset& other : others) result.others.push_back(transform(other));
  return result;
}

Eigen::VectorXd destandardize_targets(const ColumnStats& stats,
                                      const Eigen::VectorXd& standardized) {
  if (!stats.valid()) return standardized;
  if (standardized.size() != stats.mean.size()) {
    throw std::invalid_argument("destandardize_targets: dimension mismatch");
  }
  return (standardized.array() * stats.std.array() + stats.mean.array()).matrix();
}

std::vector<std::pair<std::vector<int>, std::vector<int>>> kfold_indices(
    int n, int k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("kfold: k must be >= 2");
  if (k > n) throw std::invalid_argument("kfold: k exceeds the number of rows");
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  for (int i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<int> pick(0, i);
    std::swap(perm[static_cast<std::size_t>(i)],
              perm[static_cast<std::size_t>(pick(rng))]);
  }
  std::vector<std::pair<std::vector<int>, std::vector<int>>> splits;
  splits.reserve(static_cast<std::size_t>(k));
  int start = 0;
  for (int f = 0; f < k; ++f) {
    const int size = n / k + (f < n % k ? 1 : 0);
    std::vector<int> test(perm.begin() + start, perm.begin() + start + size);
    std::vector<int> train;
    train.reserve(static_cast<std::size_t>(n - size));
    train.insert(train.end(), perm.begin(), perm.begin() + start);
    train.insert(train.end(), perm.begin() + start + size, perm.end());
    std::sort(test.begin(), test.end());
    std::sort(train.begin(), train.end());
    splits.emplace_back(std::move(train), std::move(test));
    start += size;
  }
  return splits;
}

Dataset select_rows(const Dataset& dataset, const std::vector<int>& indices) {
  Dataset out;
  out.provenance = dataset.provenance;
  out.input_stats = dataset.input_stats;
  out.target_stats = dataset.target_stats;
  out.inputs.resize(static_cast<Eigen::Index>(indices.size()), dataset.inputs.cols());
  if (dataset.has_targets()) {
    out.targets.resize(static_cast<Eigen::Index>(indices.size()), dataset.targets.cols());
  }
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    if (idx < 0 || idx >= dataset.n()) {
      throw std::invalid_argument("select_rows: index out of range");
    }
    out.inputs.row(static_cast<Eigen::Index>(i)) = dataset.inputs.row(idx);
    if (dataset.has_targets()) {
      out.targets.row(static_cast<Eigen::Index>(i)) = dataset.targets.row(idx);
    }
  }
  return out;
}

std::vector<DatasetSplit> kfold(const Dataset& dataset, int k, std::uint64_t seed) {
  const auto splits = kfold_indices(static_cast<int>(dataset.n()), k, seed);
  std::vector<DatasetSplit> out;
  out.reserve(splits.size());
  for (const auto& [train_idx, test_idx] : splits) {
    out.push_back({select_rows(dataset, train_idx), select_rows(dataset, test_idx)});
  }
  return out;
}

Dataset gaussian_input_noise(const Dataset& dataset, double sigma,
                             std::uint64_t seed) {
  if (sigma < 0.0) throw std::domain_error("gaussian_input_noise: sigma must be >= 0");
  Dataset out = dataset;
  if (sigma == 0.0) return out;
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, sigma);
  for (Eigen::Index r = 0; r < out.inputs.rows(); ++r) {
    for (Eigen::Index c = 0; c < out.inputs.cols(); ++c) out.inputs(r, c) += gauss(rng);
  }
  return out;
}

// ---- versioned JSON container ----

namespace {

constexpr const char* kDatasetFormat = "nwpn-dataset";
constexpr int kDatasetVersion = 1;

nlohmann::json stats_to_json(const ColumnStats& stats) {
  if (!stats.valid()) return nullptr;
  return nlohmann::json{
      {"mean", std::vector<double>(stats.mean.data(), stats.mean.data() + stats.mean.size())},
      {"std", std::vector<double>(stats.std.data(), stats.std.data() + stats.std.size())},
  };
}

ColumnStats stats_from_json(const nlohmann::json& j) {
  ColumnStats stats;
  if (j.is_null()) return stats;
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto std_dev = j.at("std").get<std::vector<double>>();
  if (mean.size() != std_dev.size()) {
    throw ParseError("dataset container: stats length mismatch");
  }
  stats.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(),
                                                 static_cast<Eigen::Index>(mean.size()));
  stats.std = Eigen::Map<const Eigen::VectorXd>(std_dev.data(),
                                                static_cast<Eigen::Index>(std_dev.size()));
  return stats;
}

}  // namespace

std::string dataset_to_json(const Dataset& dataset) {
  nlohmann::json j{
      {"format", kDatasetFormat},
      {"version", kDatasetVersion},
      {"n", dataset.n()},
      {"d", dataset.input_dim()},
      {"k", dataset.target_dim()},
      {"inputs", flatten_row_major(dataset.inputs)},
      {"targets", flatten_row_major(dataset.targets)},
      {"input_stats", stats_to_json(dataset.input_stats)},
      {"target_stats", stats_to_json(dataset.target_stats)},
      {"provenance", dataset.provenance},
  };
  return j.dump();
}

Dataset dataset_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("dataset container: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kDatasetFormat) {
      throw ParseError("dataset container: unknown format tag");
    }
    if (j.at("version").get<int>() != kDatasetVersion) {
      throw ParseError("dataset container: unsupported version");
    }
    Dataset d;
    const auto n = j.at("n").get<Eigen::Index>();
    const auto dim = j.at("d").get<Eigen::Index>();
    const auto k = j.at("k").get<Eigen::Index>();
    d.inputs = unflatten_row_major(j.at("inputs").get<std::vector<double>>(), n, dim);
    d.targets = unflatten_row_major(j.at("targets").get<std::vector<double>>(),
                                    k > 0 ? n : 0, k);
    d.input_stats = stats_from_json(j.at("input_stats"));
    d.target_stats = stats_from_json(j.at("target_stats"));
    d.provenance = j.at("provenance").get<std::string>();
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("dataset container: ") + e.what());
  }
}

}  // namespace rpn
