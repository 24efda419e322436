// Command-line entry point: data generation, training, evaluation,
// closed-form verification, and plot-data export.  Every command that
// takes --out writes a manifest.json pinning the resolved config; stdout
// carries exactly one final JSON summary line.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rpn/data.hpp"
#include "rpn/errors.hpp"
#include "rpn/eval.hpp"
#include "rpn/experiments.hpp"
#include "rpn/log.hpp"
#include "rpn/nn.hpp"
#include "rpn/verification.hpp"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out;
};

void add_common_flags(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "Experiment config (JSON)");
  cmd->add_option("--set", args.overrides,
                  "Config override as dotted.path=value (repeatable)");
  cmd->add_option("--seed", args.seed, "Override the config seed");
  cmd->add_option("--threads", args.threads, "Worker threads (default 1)");
  cmd->add_option("--out", args.out, "Output directory for artifacts");
}

std::string read_file_or_usage(const std::string& path) {
  if (!std::filesystem::exists(path)) {
    throw UsageError("no such file: " + path);
  }
  return rpn::load_text_file(path);
}

// Config from --config, else from <out>/manifest.json of a previous run.
rpn::ExperimentConfig resolve_config(const CommonArgs& args, bool allow_manifest) {
  rpn::ExperimentConfig cfg;
  if (!args.config_path.empty()) {
    cfg = rpn::config_from_json(read_file_or_usage(args.config_path));
  } else if (allow_manifest && !args.out.empty()) {
    const auto manifest = std::filesystem::path(args.out) / "manifest.json";
    if (std::filesystem::exists(manifest)) {
      const json m = json::parse(rpn::load_text_file(manifest.string()));
      cfg = rpn::config_from_json(m.at("config").dump());
    }
  }
  for (const std::string& kv : args.overrides) rpn::apply_override(cfg, kv);
  if (args.seed) cfg.seed = *args.seed;
  if (args.threads) cfg.threads = *args.threads;
  cfg.output_dir = args.out;
  return cfg;
}

void require_out(const CommonArgs& args, const std::string& command) {
  if (args.out.empty()) {
    throw UsageError(command + " needs --out for its artifacts");
  }
}

void write_text(const std::string& dir, const std::string& name,
                const std::string& text) {
  std::filesystem::create_directories(dir);
  rpn::save_text_file((std::filesystem::path(dir) / name).string(), text);
}

void print_summary(const json& summary) { std::cout << summary.dump() << "\n"; }

// ---- subcommand bodies ----

int cmd_gen_data(const CommonArgs& args) {
  require_out(args, "gen-data");
  const rpn::ExperimentConfig cfg = resolve_config(args, false);
  json summary{{"command", "gen-data"}, {"out", args.out},
               {"config_hash", rpn::config_hash(cfg)}};
  if (cfg.dataset.kind == "synthetic") {
    const rpn::Dataset train =
        rpn::synth_generate(cfg.dataset.train_size, rpn::mix_seed(cfg.seed, 10));
    const rpn::Dataset ood =
        rpn::synth_ood(cfg.dataset.ood_size, rpn::mix_seed(cfg.seed, 11));
    write_text(args.out, "train.json", rpn::dataset_to_json(train));
    write_text(args.out, "ood.json", rpn::dataset_to_json(ood));
    summary["n_train"] = train.n();
    summary["n_ood"] = ood.n();
  } else {
    const rpn::Dataset ds =
        rpn::csv_ingest(cfg.dataset.path, cfg.dataset.csv_schema());
    write_text(args.out, "dataset.json", rpn::dataset_to_json(ds));
    summary["n"] = ds.n();
    summary["input_dim"] = ds.input_dim();
    summary["target_dim"] = ds.target_dim();
  }
  write_text(args.out, "manifest.json", rpn::manifest_json(cfg, "gen-data"));
  print_summary(summary);
  return kExitOk;
}

int cmd_fa_ood(const CommonArgs& args) {
  require_out(args, "fa-ood");
  const rpn::ExperimentConfig cfg = resolve_config(args, false);
  if (cfg.dataset.kind != "csv") {
    throw UsageError("fa-ood needs dataset.kind = \"csv\"");
  }
  const rpn::Dataset ds = rpn::csv_ingest(cfg.dataset.path, cfg.dataset.csv_schema());
  const rpn::StandardizeResult std_ds = rpn::standardize(ds, {});
  const int dim = static_cast<int>(ds.input_dim());
  const int latent = cfg.fa.latent_dim > 0 ? cfg.fa.latent_dim
                                           : std::max(1, std::min(dim - 1, 5));
  const rpn::FactorAnalysisModel fa = rpn::fa_fit(
      std_ds.train.inputs, latent, cfg.fa.iters, rpn::mix_seed(cfg.seed, 1));
  const rpn::Dataset ood = rpn::fa_sample_ood(fa, cfg.dataset.ood_size, cfg.fa.scale,
                                              rpn::mix_seed(cfg.seed, 2));

  auto matrix_to_json = [](const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      json row = json::array();
      for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
      rows.push_back(row);
    }
    return rows;
  };
  const json fa_json{{"format", "nwpn-fa"},
                     {"version", 1},
                     {"latent_dim", latent},
                     {"loadings", matrix_to_json(fa.loadings)},
                     {"mean", std::vector<double>(fa.mean.data(),
                                                  fa.mean.data() + fa.mean.size())},
                     {"noise", std::vector<double>(fa.noise.data(),
                                                   fa.noise.data() + fa.noise.size())},
                     {"log_likelihoods", fa.log_likelihoods}};
  write_text(args.out, "fa.json", fa_json.dump(2));
  write_text(args.out, "ood.json", rpn::dataset_to_json(ood));
  write_text(args.out, "manifest.json", rpn::manifest_json(cfg, "fa-ood"));
  print_summary(json{{"command", "fa-ood"},
                     {"latent_dim", latent},
                     {"n_ood", ood.n()},
                     {"final_log_likelihood", fa.log_likelihoods.back()},
                     {"out", args.out},
                     {"config_hash", rpn::config_hash(cfg)}});
  return kExitOk;
}

int cmd_train(const CommonArgs& args) {
  require_out(args, "train");
  const rpn::ExperimentConfig cfg = resolve_config(args, false);
  json summary{{"command", "train"},
               {"experiment", cfg.experiment},
               {"model", rpn::to_string(cfg.model)},
               {"out", args.out},
               {"config_hash", rpn::config_hash(cfg)}};
  if (cfg.experiment == "synthetic") {
    const rpn::SyntheticResult result = rpn::run_synthetic(cfg);
    summary["grid_points"] = result.grid.size();
    summary["curves"] = result.curve_names;
  } else {
    const rpn::TabularResult result = rpn::run_tabular(cfg);
    summary["folds"] = result.per_fold.size();
    summary["rmse_mean"] = result.rmse.mean;
    summary["rmse_std"] = result.rmse.std;
    summary["nll_mean"] = result.nll.mean;
    summary["nll_std"] = result.nll.std;
  }
  print_summary(summary);
  return kExitOk;
}

// Loads the model (and members, when present) of a previous synthetic run.
struct LoadedRun {
  rpn::Mlp model;
  std::vector<rpn::Mlp> ensemble;
};

LoadedRun load_run(const std::string& out, rpn::ModelKind kind) {
  const auto checkpoint = std::filesystem::path(out) / "checkpoint.json";
  if (!std::filesystem::exists(checkpoint)) {
    throw UsageError("no checkpoint at " + checkpoint.string() +
                     " (run `rpn train` first)");
  }
  LoadedRun run{rpn::checkpoint_from_json(rpn::load_text_file(checkpoint.string())),
                {}};
  const auto ensemble = std::filesystem::path(out) / "ensemble.json";
  if (std::filesystem::exists(ensemble)) {
    run.ensemble =
        rpn::ensemble_checkpoint_from_json(rpn::load_text_file(ensemble.string()));
  } else if (kind == rpn::ModelKind::kEnsemble) {
    throw UsageError("model kind 'ensemble' needs " + ensemble.string());
  }
  return run;
}

int cmd_eval(const CommonArgs& args) {
  require_out(args, "eval");
  const rpn::ExperimentConfig cfg = resolve_config(args, true);
  if (cfg.experiment != "synthetic") {
    throw UsageError(
        "eval re-scores synthetic runs; tabular metrics come from `rpn train`");
  }
  const LoadedRun run = load_run(args.out, cfg.model);
  const rpn::Dataset test =
      rpn::synth_generate(cfg.dataset.train_size, rpn::mix_seed(cfg.seed, 30));
  const rpn::Dataset ood =
      rpn::synth_ood(cfg.dataset.ood_size, rpn::mix_seed(cfg.seed, 31));
  const Eigen::MatrixXd test_x = test.inputs.transpose();

  const auto n = test.n();
  Eigen::MatrixXd pred(n, test.target_dim());
  double nll_sum = 0.0;
  std::vector<double> errors(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::VectorXd xi = test_x.col(j);
    const Eigen::VectorXd yi = test.targets.row(j).transpose();
    pred.row(j) =
        rpn::mean_prediction(run.model, run.ensemble, cfg.model, xi).transpose();
    nll_sum += rpn::predictive_nll_at(run.model, run.ensemble, cfg.model, xi, yi);
    errors[static_cast<std::size_t>(j)] = (pred.row(j) - test.targets.row(j)).squaredNorm();
  }
  const auto test_scores = rpn::score_inputs(run.model, run.ensemble, cfg.model, test_x);
  const auto ood_scores =
      rpn::score_inputs(run.model, run.ensemble, cfg.model, ood.inputs.transpose());

  json prr_json, auc_json;
  for (const auto& [measure, series] : test_scores) {
    const std::vector<double> scores(series.data(), series.data() + series.size());
    try {
      prr_json[measure] = rpn::prr(rpn::rejection_curve(errors, scores));
    } catch (const std::domain_error&) {
      // All-equal errors carry no ranking signal; omit the measure.
    }
    const Eigen::VectorXd& os = ood_scores.at(measure);
    auc_json[measure] =
        rpn::auc_roc(scores, std::vector<double>(os.data(), os.data() + os.size()));
  }
  const json metrics{{"rmse", rpn::rmse(pred, test.targets)},
                     {"nll", nll_sum / static_cast<double>(n)},
                     {"prr", prr_json},
                     {"auc_roc", auc_json},
                     {"n_test", n},
                     {"n_ood", ood.n()}};
  write_text(args.out, "eval.json", metrics.dump(2));
  write_text(args.out, "manifest.json", rpn::manifest_json(cfg, "eval"));
  json summary = metrics;
  summary["command"] = "eval";
  summary["config_hash"] = rpn::config_hash(cfg);
  print_summary(summary);
  return kExitOk;
}

int cmd_export_curves(const CommonArgs& args) {
  require_out(args, "export-curves");
  const rpn::ExperimentConfig cfg = resolve_config(args, true);
  const LoadedRun run = load_run(args.out, cfg.model);
  if (run.model.config().input_dim != 1) {
    throw UsageError("export-curves draws 1-d input grids only");
  }
  const Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(601, -30.0, 30.0);
  const Eigen::MatrixXd grid_x = grid.transpose();
  const auto scores = rpn::score_inputs(run.model, run.ensemble, cfg.model, grid_x);

  std::ostringstream csv;
  csv.precision(17);
  csv << "x,mean";
  for (const auto& [name, _] : scores) csv << "," << name;
  csv << "\n";
  for (Eigen::Index j = 0; j < grid.size(); ++j) {
    csv << grid(j) << ","
        << rpn::mean_prediction(run.model, run.ensemble, cfg.model, grid_x.col(j))(0);
    for (const auto& [_, series] : scores) csv << "," << series(j);
    csv << "\n";
  }
  write_text(args.out, "curves.csv", csv.str());

  // Training-input scatter, when the run kept its dataset artifact.
  bool scatter = false;
  const auto train_path = std::filesystem::path(args.out) / "train.json";
  if (std::filesystem::exists(train_path)) {
    const rpn::Dataset train =
        rpn::dataset_from_json(rpn::load_text_file(train_path.string()));
    std::ostringstream sc;
    sc.precision(17);
    sc << "x,y\n";
    for (Eigen::Index i = 0; i < train.n(); ++i) {
      sc << train.inputs(i, 0) << "," << train.targets(i, 0) << "\n";
    }
    write_text(args.out, "scatter.csv", sc.str());
    scatter = true;
  }
  write_text(args.out, "manifest.json", rpn::manifest_json(cfg, "export-curves"));
  json curve_names = json::array();
  curve_names.push_back("mean");
  for (const auto& [name, _] : scores) curve_names.push_back(name);
  print_summary(json{{"command", "export-curves"},
                     {"curves", curve_names},
                     {"grid_points", grid.size()},
                     {"scatter", scatter},
                     {"out", args.out},
                     {"config_hash", rpn::config_hash(cfg)}});
  return kExitOk;
}

int cmd_verify(const CommonArgs& args, long samples) {
  const rpn::ExperimentConfig cfg = resolve_config(args, false);
  const rpn::VerificationReport report = rpn::run_verification(cfg.seed, samples);
  if (!args.out.empty()) {
    write_text(args.out, "verification.json", report.to_json());
    write_text(args.out, "manifest.json", rpn::manifest_json(cfg, "verify"));
  }
  print_summary(json{{"command", "verify"},
                     {"pass", report.pass},
                     {"max_abs_z", report.max_abs_z},
                     {"samples", report.samples},
                     {"rows", report.rows.size()},
                     {"config_hash", rpn::config_hash(cfg)}});
  return report.pass ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Normal-Wishart prior networks: training, evaluation, and "
               "closed-form verification"};
  app.require_subcommand(1);

  CommonArgs gen_args, fa_args, train_args, eval_args, export_args, verify_args;
  long samples = 1000000;

  CLI::App* gen = app.add_subcommand("gen-data", "Generate dataset artifacts");
  add_common_flags(gen, gen_args);
  CLI::App* fa = app.add_subcommand(
      "fa-ood", "Fit factor analysis to a CSV dataset and sample OOD inputs");
  add_common_flags(fa, fa_args);
  CLI::App* train = app.add_subcommand("train", "Train the configured model");
  add_common_flags(train, train_args);
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "Re-score a trained synthetic run");
  add_common_flags(eval_cmd, eval_args);
  CLI::App* export_cmd = app.add_subcommand(
      "export-curves", "Export mean/uncertainty grid curves from a checkpoint");
  add_common_flags(export_cmd, export_args);
  CLI::App* verify = app.add_subcommand(
      "verify", "Monte-Carlo verification of the closed-form expressions");
  add_common_flags(verify, verify_args);
  verify->add_option("--samples", samples, "Monte-Carlo draws per setting");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_args);
    if (fa->parsed()) return cmd_fa_ood(fa_args);
    if (train->parsed()) return cmd_train(train_args);
    if (eval_cmd->parsed()) return cmd_eval(eval_args);
    if (export_cmd->parsed()) return cmd_export_curves(export_args);
    if (verify->parsed()) return cmd_verify(verify_args, samples);
    std::cerr << "error: no subcommand\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const rpn::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}
