// Tests for the experiment layer: strict config parsing with dotted-path
// overrides and hashing, trainer behavior (determinism, divergence guard,
// thread-count invariance), per-kind uncertainty score sets, and the
// synthetic / tabular drivers end to end at desk scale.

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
#include "rpn/experiments.hpp"
#include "rpn/losses.hpp"
#include "rpn/nn.hpp"
#include "rpn/rng.hpp"

using namespace rpn;
namespace fs = std::filesystem;

namespace {

Eigen::MatrixXd random_matrix(int rows, int cols, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = gauss(rng);
  }
  return m;
}

// Mean gaussian NLL of a model over a column batch.
double mean_nll(const Mlp& model, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    sum += gaussian_nll(model.gaussian_params(x.col(i)), y.col(i));
  }
  return sum / static_cast<double>(x.cols());
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("model kinds round-trip through their names") {
  const std::vector<std::string> names{"single",  "ensemble", "nwpn_rkl",
                                       "end",     "md_end",   "endd"};
  for (const std::string& name : names) {
    CHECK(to_string(model_kind_from_string(name)) == name);
  }
  CHECK(head_for(ModelKind::kSingle) == HeadKind::kGaussian);
  CHECK(head_for(ModelKind::kEnsemble) == HeadKind::kGaussian);
  CHECK(head_for(ModelKind::kEnd) == HeadKind::kGaussian);
  CHECK(head_for(ModelKind::kNwpnRkl) == HeadKind::kNormalWishart);
  CHECK(head_for(ModelKind::kEndd) == HeadKind::kNormalWishart);
  CHECK(head_for(ModelKind::kMdEnd) == HeadKind::kMixture);
  CHECK_THROWS_AS((void)model_kind_from_string("bogus"), ParseError);

  ExperimentConfig cfg;
  cfg.model = ModelKind::kMdEnd;
  cfg.ensemble_size = 7;
  cfg.hidden = {12};
  const MlpConfig mlp = cfg.mlp_config(3, 2);
  CHECK(mlp.input_dim == 3);
  CHECK(mlp.target_dim == 2);
  CHECK(mlp.hidden == std::vector<int>{12});
  CHECK(mlp.head == HeadKind::kMixture);
  CHECK(mlp.mixture_size == 7);
  cfg.model = ModelKind::kNwpnRkl;
  CHECK(cfg.mlp_config(1, 1).mixture_size == 1);
}

TEST_CASE("config JSON round-trips canonically and rejects unknown keys") {
  ExperimentConfig cfg;
  cfg.experiment = "tabular";
  cfg.model = ModelKind::kEndd;
  cfg.ensemble_size = 5;
  cfg.hidden = {17, 9};
  cfg.optimizer.lr = 0.025;
  cfg.optimizer.epochs = 42;
  cfg.prior.gamma = 0.75;
  cfg.distillation.temperature = 7.5;
  cfg.distillation.teacher_checkpoint = "/tmp/teachers";
  cfg.dataset.kind = "csv";
  cfg.dataset.path = "data.csv";
  cfg.dataset.delimiter = ";";
  cfg.fa.latent_dim = 3;
  cfg.folds = 6;
  cfg.seed = 99;
  cfg.threads = 4;
  cfg.output_dir = "/tmp/out";

  const std::string text = config_to_json(cfg);
  const ExperimentConfig back = config_from_json(text);
  CHECK(config_to_json(back) == text);
  CHECK(back.model == ModelKind::kEndd);
  CHECK(back.hidden == cfg.hidden);
  CHECK(back.optimizer.lr == cfg.optimizer.lr);
  CHECK(back.dataset.delimiter == ";");
  CHECK(back.seed == 99);

  // Unknown keys are rejected with their dotted path.
  nlohmann::json j = nlohmann::json::parse(text);
  j["optimizer"]["bogus"] = 1;
  try {
    (void)config_from_json(j.dump());
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("optimizer.bogus") != std::string::npos);
  }
  j = nlohmann::json::parse(text);
  j["extra_top"] = true;
  CHECK_THROWS_AS((void)config_from_json(j.dump()), ParseError);

  // Structural validation.
  j = nlohmann::json::parse(text);
  j["schema_version"] = 2;
  CHECK_THROWS_AS((void)config_from_json(j.dump()), ParseError);
  j = nlohmann::json::parse(text);
  j["experiment"] = "weird";
  CHECK_THROWS_AS((void)config_from_json(j.dump()), ParseError);
  j = nlohmann::json::parse(text);
  j["threads"] = 0;
  CHECK_THROWS_AS((void)config_from_json(j.dump()), ParseError);
  CHECK_THROWS_AS((void)config_from_json("{broken"), ParseError);
}

TEST_CASE("dotted-path overrides parse JSON values with a string fallback") {
  ExperimentConfig cfg;
  apply_override(cfg, "optimizer.lr=0.5");
  CHECK(cfg.optimizer.lr == 0.5);
  apply_override(cfg, "network.hidden=[16,8]");
  CHECK(cfg.hidden == std::vector<int>{16, 8});
  apply_override(cfg, "model=end");  // bare string needs no quoting
  CHECK(cfg.model == ModelKind::kEnd);
  apply_override(cfg, "dataset.kind=csv");
  apply_override(cfg, "dataset.path=/tmp/a.csv");
  CHECK(cfg.dataset.path == "/tmp/a.csv");
  apply_override(cfg, "seed=123");
  CHECK(cfg.seed == 123);
  apply_override(cfg, "dataset.has_header=false");
  CHECK_FALSE(cfg.dataset.has_header);

  CHECK_THROWS_AS(apply_override(cfg, "no-equals-sign"), ParseError);
  CHECK_THROWS_AS(apply_override(cfg, "=5"), ParseError);
  CHECK_THROWS_AS(apply_override(cfg, "optimizer.nope=1"), ParseError);
  CHECK_THROWS_AS(apply_override(cfg, "model=bogus"), ParseError);
}

TEST_CASE("config_hash is a deterministic, sensitive 16-hex digest") {
  ExperimentConfig cfg;
  const std::string h1 = config_hash(cfg);
  CHECK(h1.size() == 16);
  CHECK(h1.find_first_not_of("0123456789abcdef") == std::string::npos);
  CHECK(config_hash(cfg) == h1);

  ExperimentConfig other = cfg;
  other.seed = cfg.seed + 1;
  CHECK(config_hash(other) != h1);
  other = cfg;
  other.optimizer.lr *= 2.0;
  CHECK(config_hash(other) != h1);
}

TEST_CASE("manifests pin the command, config, and hash") {
  ExperimentConfig cfg;
  cfg.seed = 31;
  const nlohmann::json j = nlohmann::json::parse(manifest_json(cfg, "train"));
  CHECK(j.at("format") == "nwpn-manifest");
  CHECK(j.at("version") == 1);
  CHECK(j.at("command") == "train");
  CHECK(j.at("config_hash") == config_hash(cfg));
  const ExperimentConfig pinned = config_from_json(j.at("config").dump());
  CHECK(config_to_json(pinned) == config_to_json(cfg));
}

TEST_CASE("trainers are deterministic, learn, and guard against divergence") {
  // y = 2 x + 1 + noise on standardized-ish data.
  const int n = 64;
  const Eigen::MatrixXd x = random_matrix(1, n, 51);
  const Eigen::MatrixXd y =
      2.0 * x + Eigen::MatrixXd::Constant(1, n, 1.0) + 0.1 * random_matrix(1, n, 52);

  MlpConfig mlp;
  mlp.input_dim = 1;
  mlp.hidden = {8};
  mlp.head = HeadKind::kGaussian;
  OptimizerConfig opt;
  opt.lr = 1e-2;
  opt.weight_decay = 0.0;
  opt.epochs = 30;
  opt.batch_size = 32;

  const Mlp trained = train_gaussian_nll(mlp, opt, x, y, 7);
  const Mlp again = train_gaussian_nll(mlp, opt, x, y, 7);
  CHECK(trained.params() == again.params());

  const Mlp init = Mlp::initialized(mlp, 7);  // shares no seed stream; reference only
  CHECK(mean_nll(trained, x, y) < mean_nll(init, x, y));

  // A divergent learning rate trips the guard.
  OptimizerConfig wild = opt;
  wild.lr = 1e4;
  wild.epochs = 100;
  CHECK_THROWS_AS((void)train_gaussian_nll(mlp, wild, x, y, 7), DivergenceError);

  // Degenerate arguments are rejected.
  OptimizerConfig bad = opt;
  bad.batch_size = 0;
  CHECK_THROWS_AS((void)train_gaussian_nll(mlp, bad, x, y, 7), std::invalid_argument);
  CHECK_THROWS_AS((void)train_gaussian_nll(mlp, opt, x, y.leftCols(n - 1), 7),
                  std::invalid_argument);

  // The reverse-KL trainer produces a model with valid NW output everywhere.
  MlpConfig nw = mlp;
  nw.head = HeadKind::kNormalWishart;
  const PriorConfig prior{prior_from_data(y.transpose(), 1e-2), 1e2, 0.5};
  const Eigen::MatrixXd ood = random_matrix(1, 32, 53, 8.0);
  const Mlp nwpn = train_nwpn_rkl(nw, opt, prior, x, y, ood, 7);
  const NormalWishartParams at_zero = nwpn.nw_params(Eigen::VectorXd::Zero(1));
  validate(at_zero);
  CHECK(std::isfinite(at_zero.kappa));

  // Distillation trainers insist on gaussian-head teachers.
  const std::vector<Mlp> bad_teachers{nwpn};
  MlpConfig student = mlp;
  CHECK_THROWS_AS((void)train_end(student, opt, bad_teachers, x, 7),
                  std::invalid_argument);
}

TEST_CASE("train_ensemble is invariant to the worker-pool width") {
  const int n = 48;
  const Eigen::MatrixXd x = random_matrix(2, n, 61);
  const Eigen::MatrixXd y = random_matrix(1, n, 62);
  MlpConfig mlp;
  mlp.input_dim = 2;
  mlp.hidden = {6};
  mlp.head = HeadKind::kGaussian;
  OptimizerConfig opt;
  opt.lr = 1e-2;
  opt.epochs = 10;
  opt.batch_size = 16;

  const std::vector<Mlp> serial = train_ensemble(mlp, opt, 3, x, y, 9, 1);
  const std::vector<Mlp> pooled = train_ensemble(mlp, opt, 3, x, y, 9, 3);
  REQUIRE(serial.size() == 3);
  REQUIRE(pooled.size() == 3);
  for (int m = 0; m < 3; ++m) {
    CHECK(serial[m].params() == pooled[m].params());
  }
  // Members differ from each other (distinct seed streams).
  CHECK(serial[0].params() != serial[1].params());
}

TEST_CASE("score_inputs exposes the measure set of each model family") {
  const Eigen::MatrixXd x = random_matrix(1, 3, 71);
  MlpConfig base;
  base.input_dim = 1;
  base.hidden = {4};

  auto keys_of = [&](const std::map<std::string, Eigen::VectorXd>& scores) {
    std::set<std::string> keys;
    for (const auto& [key, value] : scores) {
      CHECK(value.size() == 3);
      keys.insert(key);
    }
    return keys;
  };

  SUBCASE("normal-wishart kinds carry all seven measures") {
    MlpConfig cfg = base;
    cfg.head = HeadKind::kNormalWishart;
    const Mlp model = Mlp::initialized(cfg, 1);
    const auto scores = score_inputs(model, {}, ModelKind::kNwpnRkl, x);
    CHECK(keys_of(scores) ==
          std::set<std::string>{"total_var", "data_var", "knowledge_var",
                                "total_entropy", "data_entropy",
                                "mutual_information", "epkl"});
    // Decompositions hold coefficient-wise across the batch.
    for (int i = 0; i < 3; ++i) {
      CHECK(scores.at("total_entropy")(i) - scores.at("data_entropy")(i) ==
            doctest::Approx(scores.at("mutual_information")(i)).epsilon(1e-10));
    }
  }

  SUBCASE("ensembles carry the empirical measures") {
    MlpConfig cfg = base;
    cfg.head = HeadKind::kGaussian;
    std::vector<Mlp> members;
    for (std::uint64_t s = 0; s < 3; ++s) members.push_back(Mlp::initialized(cfg, s));
    const auto scores = score_inputs(members.front(), members, ModelKind::kEnsemble, x);
    CHECK(keys_of(scores) ==
          std::set<std::string>{"total_var", "data_var", "knowledge_var",
                                "data_entropy", "epkl"});
  }

  SUBCASE("single gaussian kinds scalarize the predicted variance only") {
    MlpConfig cfg = base;
    cfg.head = HeadKind::kGaussian;
    const Mlp model = Mlp::initialized(cfg, 2);
    const auto scores = score_inputs(model, {}, ModelKind::kSingle, x);
    CHECK(keys_of(scores) == std::set<std::string>{"total_var", "data_var"});
    CHECK(scores.at("total_var") == scores.at("data_var"));
  }

  SUBCASE("mixture heads with several components use ensemble measures") {
    MlpConfig cfg = base;
    cfg.head = HeadKind::kMixture;
    cfg.mixture_size = 4;
    const Mlp model = Mlp::initialized(cfg, 3);
    const auto scores = score_inputs(model, {}, ModelKind::kMdEnd, x);
    CHECK(keys_of(scores).count("knowledge_var") == 1);
    CHECK(keys_of(scores).count("epkl") == 1);
  }
}

TEST_CASE("run_synthetic trains, scores a grid, and writes artifacts deterministically") {
  TempDir dir("rpn_synth_test");
  ExperimentConfig cfg;
  cfg.experiment = "synthetic";
  cfg.model = ModelKind::kNwpnRkl;
  cfg.hidden = {8};
  cfg.optimizer.epochs = 8;
  cfg.optimizer.batch_size = 32;
  cfg.dataset.train_size = 96;
  cfg.dataset.ood_size = 32;
  cfg.seed = 3;
  cfg.output_dir = (dir.path / "run").string();

  const SyntheticResult result = run_synthetic(cfg);
  REQUIRE(result.grid.size() == 601);
  CHECK(result.grid(0) == doctest::Approx(-30.0));
  CHECK(result.grid(600) == doctest::Approx(30.0));
  REQUIRE(result.curves.rows() == 601);
  REQUIRE(result.curves.cols() ==
          static_cast<Eigen::Index>(result.curve_names.size()));
  CHECK(result.curve_names.front() == "mean");
  CHECK(result.curves.allFinite());
  CHECK(result.ensemble.empty());

  for (const char* name : {"curves.csv", "checkpoint.json", "train.json",
                           "manifest.json"}) {
    CHECK(fs::exists(dir.path / "run" / name));
  }
  CHECK_FALSE(fs::exists(dir.path / "run" / "ensemble.json"));

  // Same config, fresh run: identical curves.
  ExperimentConfig repeat = cfg;
  repeat.output_dir.clear();
  const SyntheticResult again = run_synthetic(repeat);
  CHECK(again.curves == result.curves);

  // The synthetic driver refuses csv datasets.
  ExperimentConfig bad = cfg;
  bad.dataset.kind = "csv";
  CHECK_THROWS_AS((void)run_synthetic(bad), std::invalid_argument);
}

TEST_CASE("run_tabular runs the k-fold protocol on a toy csv") {
  TempDir dir("rpn_tabular_test");

  // y = 2 a - b + noise, with a pure-noise third feature.
  const int n = 120;
  const Eigen::MatrixXd a = random_matrix(n, 1, 81);
  const Eigen::MatrixXd b = random_matrix(n, 1, 82);
  const Eigen::MatrixXd c = random_matrix(n, 1, 83);
  const Eigen::MatrixXd noise = 0.1 * random_matrix(n, 1, 84);
  std::ofstream csv(dir.path / "toy.csv");
  csv << "a,b,c,y\n";
  for (int i = 0; i < n; ++i) {
    csv << a(i, 0) << "," << b(i, 0) << "," << c(i, 0) << ","
        << 2.0 * a(i, 0) - b(i, 0) + noise(i, 0) << "\n";
  }
  csv.close();

  ExperimentConfig cfg;
  cfg.experiment = "tabular";
  cfg.model = ModelKind::kSingle;
  cfg.hidden = {8};
  cfg.optimizer.epochs = 100;
  cfg.optimizer.batch_size = 32;
  cfg.dataset.kind = "csv";
  cfg.dataset.path = (dir.path / "toy.csv").string();
  cfg.folds = 4;
  cfg.seed = 5;
  cfg.threads = 1;
  cfg.output_dir = (dir.path / "out").string();

  const TabularResult result = run_tabular(cfg);
  REQUIRE(result.per_fold.size() == 4);
  CHECK(std::isfinite(result.rmse.mean));
  // Comfortably below the target's own std (~2.2): the signal was learned.
  CHECK(result.rmse.mean < 1.0);
  CHECK(result.rmse.std >= 0.0);
  CHECK(std::isfinite(result.nll.mean));
  for (const auto& [measure, agg] : result.prr) {
    CHECK(std::isfinite(agg.mean));
    CHECK(agg.mean <= 1.0 + 1e-9);
  }
  for (const auto& [measure, agg] : result.auc_roc) {
    CHECK(agg.mean >= 0.0);
    CHECK(agg.mean <= 1.0);
  }

  // Artifacts and the summary JSON.
  CHECK(fs::exists(dir.path / "out" / "metrics.json"));
  CHECK(fs::exists(dir.path / "out" / "manifest.json"));
  CHECK(fs::exists(dir.path / "out" / "fold0" / "checkpoint.json"));
  const nlohmann::json j = nlohmann::json::parse(result.to_json());
  CHECK(j.at("folds") == 4);
  CHECK(j.at("per_fold").size() == 4);
  CHECK(j.at("rmse").at("mean").get<double>() ==
        doctest::Approx(result.rmse.mean).epsilon(1e-12));

  // A second run with a wider pool reproduces the metrics exactly.
  ExperimentConfig pooled = cfg;
  pooled.threads = 2;
  pooled.output_dir.clear();
  const TabularResult again = run_tabular(pooled);
  REQUIRE(again.per_fold.size() == 4);
  for (int f = 0; f < 4; ++f) {
    CHECK(again.per_fold[f].rmse == result.per_fold[f].rmse);
    CHECK(again.per_fold[f].nll == result.per_fold[f].nll);
  }

  // Distillation on tabular data requires a teacher artifact path.
  ExperimentConfig distill = cfg;
  distill.model = ModelKind::kEndd;
  distill.distillation.teacher_checkpoint.clear();
  CHECK_THROWS_AS((void)run_tabular(distill), std::invalid_argument);

  // The tabular driver refuses synthetic datasets.
  ExperimentConfig bad = cfg;
  bad.dataset.kind = "synthetic";
  CHECK_THROWS_AS((void)run_tabular(bad), std::invalid_argument);
}
