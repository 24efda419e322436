#pragma once

// Experiment drivers tying data, models, losses, and metrics together: the
// synthetic sin-wave study, the tabular k-fold protocol with
// factor-analysis OOD sets, and the batched trainers each of them uses.
// Configs are versioned JSON with strict (unknown-key-rejecting) parsing
// and dotted-path overrides; every run can emit a manifest that pins the
// resolved config and a content hash.

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rpn/data.hpp"
#include "rpn/losses.hpp"
#include "rpn/nn.hpp"
#include "rpn/uncertainty.hpp"

namespace rpn {

enum class ModelKind { kSingle, kEnsemble, kNwpnRkl, kEnd, kMdEnd, kEndd };
ModelKind model_kind_from_string(const std::string& name);
std::string to_string(ModelKind kind);
// Head implied by the model kind: gaussian for single/ensemble/end, NW for
// nwpn_rkl/endd, mixture for md_end.
HeadKind head_for(ModelKind kind);

struct OptimizerConfig {
  double lr = 1e-2;
  double weight_decay = 1e-4;
  int epochs = 800;
  int batch_size = 128;
};

struct DatasetConfig {
  std::string kind = "synthetic";  // "synthetic" or "csv"
  std::string path;
  bool has_header = true;
  std::string delimiter = ",";
  int target_column = -1;
  bool drop_constant_columns = true;
  int take_first_rows = -1;
  int take_first_features = -1;
  int train_size = 2048;  // synthetic only
  int ood_size = 512;     // synthetic only

  CsvSchema csv_schema() const;
};

struct DistillationConfig {
  double temperature = 1.0;      // initial annealing temperature
  double hold_fraction = 0.2;    // see AnnealSchedule
  double decay_fraction = 0.6;
  double input_noise_sigma = 3.0;
  std::string teacher_checkpoint;  // ensemble artifact location

  AnnealSchedule schedule() const {
    return AnnealSchedule{temperature, hold_fraction, decay_fraction};
  }
};

struct FaConfig {
  int latent_dim = -1;  // -1 resolves to min(D-1, 5)
  double scale = 3.0;
  int iters = 200;
};

struct PriorHyper {
  double kappa0 = 1e-2;  // also the nu_0 excess over K+1
  double beta_in = 1e2;
  double gamma = 0.5;
};

struct ExperimentConfig {
  int schema_version = 1;
  std::string experiment = "synthetic";  // "synthetic" or "tabular"
  ModelKind model = ModelKind::kNwpnRkl;
  int ensemble_size = 10;
  std::vector<int> hidden = {30, 30};
  OptimizerConfig optimizer;
  PriorHyper prior;
  DistillationConfig distillation;
  DatasetConfig dataset;
  FaConfig fa;
  int folds = 10;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string output_dir;

  MlpConfig mlp_config(int input_dim, int target_dim) const;
};

// Strict JSON (de)serialization: unknown keys are rejected with their path.
ExperimentConfig config_from_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& cfg);
// Applies a dotted-path override ("optimizer.lr=0.01"); values parse as
// JSON scalars, falling back to strings.
void apply_override(ExperimentConfig& cfg, const std::string& key_equals_value);

// FNV-1a hash of the canonical config dump, as fixed-width hex.
std::string config_hash(const ExperimentConfig& cfg);
// Manifest JSON pinning command, resolved config, and config hash.
std::string manifest_json(const ExperimentConfig& cfg, const std::string& command);

// ---- trainers (column-major batches: x is D x N, y is K x N) ----
// All trainers shuffle per epoch, consume full batches plus the remainder,
// and throw DivergenceError when the loss turns non-finite or exceeds 1e8.

Mlp train_gaussian_nll(const MlpConfig& mlp, const OptimizerConfig& opt,
                       const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                       std::uint64_t seed);

Mlp train_nwpn_rkl(const MlpConfig& mlp, const OptimizerConfig& opt,
                   const PriorConfig& prior, const Eigen::MatrixXd& x,
                   const Eigen::MatrixXd& y, const Eigen::MatrixXd& ood_x,
                   std::uint64_t seed);

Mlp train_end(const MlpConfig& mlp, const OptimizerConfig& opt,
              const std::vector<Mlp>& teachers, const Eigen::MatrixXd& x,
              std::uint64_t seed);

Mlp train_md_end(const MlpConfig& mlp, const OptimizerConfig& opt,
                 const std::vector<Mlp>& teachers, const Eigen::MatrixXd& x,
                 std::uint64_t seed);

Mlp train_endd(const MlpConfig& mlp, const OptimizerConfig& opt,
               const AnnealSchedule& schedule, const std::vector<Mlp>& teachers,
               const Eigen::MatrixXd& x, std::uint64_t seed);

// Trains an ensemble of gaussian-head members differing only by seed;
// members run on a worker pool of cfg-threads with per-member seed streams,
// so results are independent of the thread count.
std::vector<Mlp> train_ensemble(const MlpConfig& mlp, const OptimizerConfig& opt,
                                int members, const Eigen::MatrixXd& x,
                                const Eigen::MatrixXd& y, std::uint64_t seed,
                                int threads);

// ---- per-input uncertainty scoring used by both drivers ----

// Named per-example uncertainty scores for a trained model at input x
// (columns of the returned map's vectors align with x's columns).
std::map<std::string, Eigen::VectorXd> score_inputs(
    const Mlp& model, const std::vector<Mlp>& ensemble, ModelKind kind,
    const Eigen::MatrixXd& x, Scalarization mode = Scalarization::kLogDet);

// Point prediction at x: the predictive mean of the model kind (ensemble
// and mixture kinds average their members/components).
Eigen::VectorXd mean_prediction(const Mlp& model, const std::vector<Mlp>& ensemble,
                                ModelKind kind, const Eigen::VectorXd& x);

// -log predictive density of y at x under the model kind's posterior
// (Student-T for NW heads, mixture for ensembles and mixture heads).
double predictive_nll_at(const Mlp& model, const std::vector<Mlp>& ensemble,
                         ModelKind kind, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& y);

// ---- drivers ----

struct SyntheticResult {
  Mlp model;                 // the trained (or distilled) model
  std::vector<Mlp> ensemble; // members, when the model kind involves them
  Eigen::VectorXd grid;      // x grid over [-30, 30]
  Eigen::MatrixXd curves;    // one row per grid point, one column per series
  std::vector<std::string> curve_names;
  std::string manifest;
};

// Trains the configured model on the synthetic benchmark and evaluates
// mean + uncertainty curves on a dense grid.  Distillation kinds train
// their teacher ensemble in-run unless `teachers` is supplied.  When
// cfg.output_dir is set, writes curves.csv, checkpoint.json (and
// ensemble.json), train.json, and manifest.json there.
SyntheticResult run_synthetic(const ExperimentConfig& cfg,
                              const std::vector<Mlp>* teachers = nullptr);

struct FoldMetrics {
  double rmse = 0.0;
  double nll = 0.0;
  std::map<std::string, double> prr;      // per uncertainty measure
  std::map<std::string, double> auc_roc;  // per measure, in-domain vs OOD
};

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;
};

struct TabularResult {
  std::vector<FoldMetrics> per_fold;
  Aggregate rmse;
  Aggregate nll;
  std::map<std::string, Aggregate> prr;
  std::map<std::string, Aggregate> auc_roc;
  std::string manifest;
  std::string to_json() const;
};

// k-fold protocol: per fold, standardize on the train split, train the
// configured model, evaluate RMSE/NLL in original target units, PRR per
// measure on the test split, and AUC-ROC per measure against a
// factor-analysis OOD sample.  Distillation kinds load the per-fold
// ensemble artifact from distillation.teacher_checkpoint.  Folds run on a
// worker pool; results are independent of the thread count.
TabularResult run_tabular(const ExperimentConfig& cfg);

}  // namespace rpn
