#include "rpn/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <limits>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "rpn/errors.hpp"
#include "rpn/eval.hpp"
#include "rpn/graph_losses.hpp"
#include "rpn/log.hpp"

namespace rpn {

using nlohmann::json;

// ---- model kinds ----

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "single") return ModelKind::kSingle;
  if (name == "ensemble") return ModelKind::kEnsemble;
  if (name == "nwpn_rkl") return ModelKind::kNwpnRkl;
  if (name == "end") return ModelKind::kEnd;
  if (name == "md_end") return ModelKind::kMdEnd;
  if (name == "endd") return ModelKind::kEndd;
  throw ParseError("config: unknown model kind '" + name + "'");
}

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kSingle: return "single";
    case ModelKind::kEnsemble: return "ensemble";
    case ModelKind::kNwpnRkl: return "nwpn_rkl";
    case ModelKind::kEnd: return "end";
    case ModelKind::kMdEnd: return "md_end";
    case ModelKind::kEndd: return "endd";
  }
  throw std::invalid_argument("to_string: unknown model kind");
}

HeadKind head_for(ModelKind kind) {
  switch (kind) {
    case ModelKind::kSingle:
    case ModelKind::kEnsemble:
    case ModelKind::kEnd:
      return HeadKind::kGaussian;
    case ModelKind::kNwpnRkl:
    case ModelKind::kEndd:
      return HeadKind::kNormalWishart;
    case ModelKind::kMdEnd:
      return HeadKind::kMixture;
  }
  throw std::invalid_argument("head_for: unknown model kind");
}

CsvSchema DatasetConfig::csv_schema() const {
  if (delimiter.size() != 1) {
    throw std::invalid_argument("dataset.delimiter must be a single character");
  }
  CsvSchema schema;
  schema.has_header = has_header;
  schema.delimiter = delimiter[0];
  schema.target_column = target_column;
  schema.drop_constant_columns = drop_constant_columns;
  schema.take_first_rows = take_first_rows;
  schema.take_first_features = take_first_features;
  return schema;
}

MlpConfig ExperimentConfig::mlp_config(int input_dim, int target_dim) const {
  MlpConfig mlp;
  mlp.input_dim = input_dim;
  mlp.target_dim = target_dim;
  mlp.hidden = hidden;
  mlp.head = head_for(model);
  mlp.mixture_size = model == ModelKind::kMdEnd ? ensemble_size : 1;
  return mlp;
}

// ---- strict JSON config ----

namespace {

void expect_keys(const json& j, const std::string& path,
                 std::initializer_list<const char*> keys) {
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* key : keys) {
      if (item.key() == key) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ParseError("config: unknown key '" + path + item.key() + "'");
    }
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

}  // namespace

ExperimentConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  try {
    ExperimentConfig cfg;
    expect_keys(j, "", {"schema_version", "experiment", "model", "ensemble_size",
                        "network", "optimizer", "prior", "distillation", "dataset",
                        "fa", "folds", "seed", "threads", "output_dir"});
    read_field(j, "schema_version", cfg.schema_version);
    if (cfg.schema_version != 1) {
      throw ParseError("config: unsupported schema_version");
    }
    read_field(j, "experiment", cfg.experiment);
    if (cfg.experiment != "synthetic" && cfg.experiment != "tabular") {
      throw ParseError("config: experiment must be 'synthetic' or 'tabular'");
    }
    if (j.contains("model")) cfg.model = model_kind_from_string(j.at("model"));
    read_field(j, "ensemble_size", cfg.ensemble_size);
    if (cfg.ensemble_size < 1) throw ParseError("config: ensemble_size must be >= 1");

    if (j.contains("network")) {
      const json& n = j.at("network");
      expect_keys(n, "network.", {"hidden"});
      read_field(n, "hidden", cfg.hidden);
    }
    if (j.contains("optimizer")) {
      const json& o = j.at("optimizer");
      expect_keys(o, "optimizer.", {"lr", "weight_decay", "epochs", "batch_size"});
      read_field(o, "lr", cfg.optimizer.lr);
      read_field(o, "weight_decay", cfg.optimizer.weight_decay);
      read_field(o, "epochs", cfg.optimizer.epochs);
      read_field(o, "batch_size", cfg.optimizer.batch_size);
    }
    if (j.contains("prior")) {
      const json& p = j.at("prior");
      expect_keys(p, "prior.", {"kappa0", "beta_in", "gamma"});
      read_field(p, "kappa0", cfg.prior.kappa0);
      read_field(p, "beta_in", cfg.prior.beta_in);
      read_field(p, "gamma", cfg.prior.gamma);
    }
    if (j.contains("distillation")) {
      const json& d = j.at("distillation");
      expect_keys(d, "distillation.",
                  {"temperature", "hold_fraction", "decay_fraction",
                   "input_noise_sigma", "teacher_checkpoint"});
      read_field(d, "temperature", cfg.distillation.temperature);
      read_field(d, "hold_fraction", cfg.distillation.hold_fraction);
      read_field(d, "decay_fraction", cfg.distillation.decay_fraction);
      read_field(d, "input_noise_sigma", cfg.distillation.input_noise_sigma);
      read_field(d, "teacher_checkpoint", cfg.distillation.teacher_checkpoint);
    }
    if (j.contains("dataset")) {
      const json& d = j.at("dataset");
      expect_keys(d, "dataset.",
                  {"kind", "path", "has_header", "delimiter", "target_column",
                   "drop_constant_columns", "take_first_rows",
                   "take_first_features", "train_size", "ood_size"});
      read_field(d, "kind", cfg.dataset.kind);
      if (cfg.dataset.kind != "synthetic" && cfg.dataset.kind != "csv") {
        throw ParseError("config: dataset.kind must be 'synthetic' or 'csv'");
      }
      read_field(d, "path", cfg.dataset.path);
      read_field(d, "has_header", cfg.dataset.has_header);
      read_field(d, "delimiter", cfg.dataset.delimiter);
      read_field(d, "target_column", cfg.dataset.target_column);
      read_field(d, "drop_constant_columns", cfg.dataset.drop_constant_columns);
      read_field(d, "take_first_rows", cfg.dataset.take_first_rows);
      read_field(d, "take_first_features", cfg.dataset.take_first_features);
      read_field(d, "train_size", cfg.dataset.train_size);
      read_field(d, "ood_size", cfg.dataset.ood_size);
    }
    if (j.contains("fa")) {
      const json& f = j.at("fa");
      expect_keys(f, "fa.", {"latent_dim", "scale", "iters"});
      read_field(f, "latent_dim", cfg.fa.latent_dim);
      read_field(f, "scale", cfg.fa.scale);
      read_field(f, "iters", cfg.fa.iters);
    }
    read_field(j, "folds", cfg.folds);
    read_field(j, "seed", cfg.seed);
    read_field(j, "threads", cfg.threads);
    if (cfg.threads < 1) throw ParseError("config: threads must be >= 1");
    read_field(j, "output_dir", cfg.output_dir);
    return cfg;
  } catch (const json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
}

std::string config_to_json(const ExperimentConfig& cfg) {
  const json j{
      {"schema_version", cfg.schema_version},
      {"experiment", cfg.experiment},
      {"model", to_string(cfg.model)},
      {"ensemble_size", cfg.ensemble_size},
      {"network", {{"hidden", cfg.hidden}}},
      {"optimizer",
       {{"lr", cfg.optimizer.lr},
        {"weight_decay", cfg.optimizer.weight_decay},
        {"epochs", cfg.optimizer.epochs},
        {"batch_size", cfg.optimizer.batch_size}}},
      {"prior",
       {{"kappa0", cfg.prior.kappa0},
        {"beta_in", cfg.prior.beta_in},
        {"gamma", cfg.prior.gamma}}},
      {"distillation",
       {{"temperature", cfg.distillation.temperature},
        {"hold_fraction", cfg.distillation.hold_fraction},
        {"decay_fraction", cfg.distillation.decay_fraction},
        {"input_noise_sigma", cfg.distillation.input_noise_sigma},
        {"teacher_checkpoint", cfg.distillation.teacher_checkpoint}}},
      {"dataset",
       {{"kind", cfg.dataset.kind},
        {"path", cfg.dataset.path},
        {"has_header", cfg.dataset.has_header},
        {"delimiter", cfg.dataset.delimiter},
        {"target_column", cfg.dataset.target_column},
        {"drop_constant_columns", cfg.dataset.drop_constant_columns},
        {"take_first_rows", cfg.dataset.take_first_rows},
        {"take_first_features", cfg.dataset.take_first_features},
        {"train_size", cfg.dataset.train_size},
        {"ood_size", cfg.dataset.ood_size}}},
      {"fa",
       {{"latent_dim", cfg.fa.latent_dim},
        {"scale", cfg.fa.scale},
        {"iters", cfg.fa.iters}}},
      {"folds", cfg.folds},
      {"seed", cfg.seed},
      {"threads", cfg.threads},
      {"output_dir", cfg.output_dir},
  };
  return j.dump(2);
}

void apply_override(ExperimentConfig& cfg, const std::string& key_equals_value) {
  const std::size_t eq = key_equals_value.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ParseError("override must look like key.path=value: '" +
                     key_equals_value + "'");
  }
  const std::string key = key_equals_value.substr(0, eq);
  const std::string value = key_equals_value.substr(eq + 1);
  std::string pointer = "/";
  for (char c : key) pointer += c == '.' ? '/' : c;

  json parsed_value;
  try {
    parsed_value = json::parse(value);
  } catch (const json::exception&) {
    parsed_value = value;  // plain strings need no quoting
  }
  json j = json::parse(config_to_json(cfg));
  try {
    j[json::json_pointer(pointer)] = parsed_value;
  } catch (const json::exception& e) {
    throw ParseError("override '" + key + "': " + e.what());
  }
  cfg = config_from_json(j.dump());
}

std::string config_hash(const ExperimentConfig& cfg) {
  // The hash identifies the experiment itself; where artifacts are written
  // and how many workers ran cannot change any computed result.
  json stripped = json::parse(config_to_json(cfg));
  stripped.erase("output_dir");
  stripped.erase("threads");
  const std::string dump = stripped.dump(2);
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string manifest_json(const ExperimentConfig& cfg, const std::string& command) {
  const json j{
      {"format", "nwpn-manifest"},
      {"version", 1},
      {"command", command},
      {"config", json::parse(config_to_json(cfg))},
      {"config_hash", config_hash(cfg)},
  };
  return j.dump(2);
}

// ---- trainer plumbing ----

namespace {

constexpr double kDivergenceLimit = 1e8;

void check_loss(double loss) {
  if (!std::isfinite(loss) || std::abs(loss) > kDivergenceLimit) {
    throw DivergenceError("training diverged: loss = " + std::to_string(loss));
  }
}

void shuffle_indices(std::vector<int>& idx, Rng& rng) {
  for (int i = static_cast<int>(idx.size()) - 1; i > 0; --i) {
    std::uniform_int_distribution<int> pick(0, i);
    std::swap(idx[static_cast<std::size_t>(i)],
              idx[static_cast<std::size_t>(pick(rng))]);
  }
}

std::vector<std::vector<int>> epoch_batches(int n, int batch_size, Rng& rng) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  shuffle_indices(idx, rng);
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < n; start += batch_size) {
    const int end = std::min(n, start + batch_size);
    batches.emplace_back(idx.begin() + start, idx.begin() + end);
  }
  return batches;
}

Eigen::MatrixXd gather_cols(const Eigen::MatrixXd& m, const std::vector<int>& idx) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.col(static_cast<Eigen::Index>(i)) = m.col(idx[i]);
  }
  return out;
}

// Endless shuffled stream over 0..n-1, reshuffling at each wraparound.
class IndexCycler {
 public:
  IndexCycler(int n, std::uint64_t seed)
      : rng_(seed), order_(static_cast<std::size_t>(n)) {
    std::iota(order_.begin(), order_.end(), 0);
    shuffle_indices(order_, rng_);
  }

  std::vector<int> take(int count) {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(count));
    while (count-- > 0) {
      if (pos_ == order_.size()) {
        shuffle_indices(order_, rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  Rng rng_;
  std::vector<int> order_;
  std::size_t pos_ = 0;
};

void check_training_args(const MlpConfig& mlp, const OptimizerConfig& opt,
                         const Eigen::MatrixXd& x) {
  if (x.cols() < 1) throw std::invalid_argument("train: empty input batch");
  if (x.rows() != mlp.input_dim) {
    throw std::invalid_argument("train: input rows != input_dim");
  }
  if (opt.epochs < 1 || opt.batch_size < 1) {
    throw std::invalid_argument("train: epochs and batch_size must be >= 1");
  }
}

AdamConfig adam_config(const OptimizerConfig& opt) {
  AdamConfig adam;
  adam.lr = opt.lr;
  adam.weight_decay = opt.weight_decay;
  return adam;
}

// Teacher predictions for a batch, as lift-ready column blocks.
GaussianColumns teacher_columns(const Mlp& teacher, const Eigen::MatrixXd& xb) {
  const Eigen::MatrixXd raw = teacher.forward_raw(xb);
  std::vector<NormalParams> per_example;
  per_example.reserve(static_cast<std::size_t>(xb.cols()));
  for (Eigen::Index j = 0; j < xb.cols(); ++j) {
    per_example.push_back(teacher.gaussian_from_raw(raw.col(j)));
  }
  return pack_gaussians(per_example);
}

void check_teachers(const std::vector<Mlp>& teachers, const MlpConfig& mlp) {
  if (teachers.empty()) throw std::invalid_argument("distillation: no teachers");
  for (const Mlp& t : teachers) {
    if (t.config().head != HeadKind::kGaussian) {
      throw std::invalid_argument("distillation: teachers must have gaussian heads");
    }
    if (t.config().input_dim != mlp.input_dim ||
        t.config().target_dim != mlp.target_dim) {
      throw std::invalid_argument("distillation: teacher/student shape mismatch");
    }
  }
}

}  // namespace

Mlp train_gaussian_nll(const MlpConfig& mlp, const OptimizerConfig& opt,
                       const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                       std::uint64_t seed) {
  check_training_args(mlp, opt, x);
  if (y.cols() != x.cols() || y.rows() != mlp.target_dim) {
    throw std::invalid_argument("train_gaussian_nll: target shape mismatch");
  }
  Mlp model = Mlp::initialized(mlp, mix_seed(seed, 0));
  AdamState state(model.param_count());
  const AdamConfig adam = adam_config(opt);
  Rng shuffle_rng(mix_seed(seed, 1));
  ad::Tape tape;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    for (const auto& batch : epoch_batches(static_cast<int>(x.cols()),
                                           opt.batch_size, shuffle_rng)) {
      tape.clear();
      const Eigen::MatrixXd xb = gather_cols(x, batch);
      const Eigen::MatrixXd yb = gather_cols(y, batch);
      const Mlp::GraphForward gf = model.forward_graph(tape, xb);
      const GaussianValues head = gaussian_head(model.config(), gf.raw);
      const ad::Value loss = ad::mean(gaussian_nll_rows(head, tape.constant(yb)));
      check_loss(loss.scalar());
      tape.backward(loss);
      adam_step(model.params(), model.read_gradient(gf), state, adam);
    }
  }
  return model;
}

Mlp train_nwpn_rkl(const MlpConfig& mlp, const OptimizerConfig& opt,
                   const PriorConfig& prior, const Eigen::MatrixXd& x,
                   const Eigen::MatrixXd& y, const Eigen::MatrixXd& ood_x,
                   std::uint64_t seed) {
  check_training_args(mlp, opt, x);
  if (y.cols() != x.cols() || y.rows() != mlp.target_dim) {
    throw std::invalid_argument("train_nwpn_rkl: target shape mismatch");
  }
  const bool use_ood = prior.gamma != 0.0;
  if (use_ood && ood_x.cols() < 1) {
    throw std::invalid_argument("train_nwpn_rkl: OOD batch empty but gamma != 0");
  }
  Mlp model = Mlp::initialized(mlp, mix_seed(seed, 0));
  AdamState state(model.param_count());
  const AdamConfig adam = adam_config(opt);
  Rng shuffle_rng(mix_seed(seed, 1));
  IndexCycler ood_stream(static_cast<int>(ood_x.cols()), mix_seed(seed, 2));
  ad::Tape tape;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    for (const auto& batch : epoch_batches(static_cast<int>(x.cols()),
                                           opt.batch_size, shuffle_rng)) {
      tape.clear();
      const Eigen::MatrixXd xb = gather_cols(x, batch);
      const Eigen::MatrixXd yb = gather_cols(y, batch);
      const Mlp::GraphForward gf_in = model.forward_graph(tape, xb);
      const NwValues omega_in = nw_head(model.config(), gf_in.raw);
      ad::Value loss = ad::mean(
          rkl_loss_rows(omega_in, tape.constant(yb), prior.beta_in, prior.omega0));
      std::optional<Mlp::GraphForward> gf_ood;
      if (use_ood) {
        const Eigen::MatrixXd ob =
            gather_cols(ood_x, ood_stream.take(static_cast<int>(batch.size())));
        gf_ood = model.forward_graph(tape, ob);
        const NwValues omega_ood = nw_head(model.config(), gf_ood->raw);
        loss = loss + prior.gamma * ad::mean(rkl_prior_rows(omega_ood, prior.omega0));
      }
      check_loss(loss.scalar());
      tape.backward(loss);
      Eigen::VectorXd grad = model.read_gradient(gf_in);
      if (gf_ood) grad += model.read_gradient(*gf_ood);
      adam_step(model.params(), grad, state, adam);
    }
  }
  return model;
}

Mlp train_end(const MlpConfig& mlp, const OptimizerConfig& opt,
              const std::vector<Mlp>& teachers, const Eigen::MatrixXd& x,
              std::uint64_t seed) {
  check_training_args(mlp, opt, x);
  check_teachers(teachers, mlp);
  Mlp model = Mlp::initialized(mlp, mix_seed(seed, 0));
  AdamState state(model.param_count());
  const AdamConfig adam = adam_config(opt);
  Rng shuffle_rng(mix_seed(seed, 1));
  ad::Tape tape;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    for (const auto& batch : epoch_batches(static_cast<int>(x.cols()),
                                           opt.batch_size, shuffle_rng)) {
      tape.clear();
      const Eigen::MatrixXd xb = gather_cols(x, batch);
      std::vector<GaussianValues> members;
      members.reserve(teachers.size());
      for (const Mlp& teacher : teachers) {
        const GaussianColumns cols = teacher_columns(teacher, xb);
        members.push_back(lift_gaussian(tape, cols.mean, cols.prec_chol));
      }
      const Mlp::GraphForward gf = model.forward_graph(tape, xb);
      const GaussianValues student = gaussian_head(model.config(), gf.raw);
      const ad::Value loss = ad::mean(end_loss_rows(members, student));
      check_loss(loss.scalar());
      tape.backward(loss);
      adam_step(model.params(), model.read_gradient(gf), state, adam);
    }
  }
  return model;
}

Mlp train_md_end(const MlpConfig& mlp, const OptimizerConfig& opt,
                 const std::vector<Mlp>& teachers, const Eigen::MatrixXd& x,
                 std::uint64_t seed) {
  check_training_args(mlp, opt, x);
  check_teachers(teachers, mlp);
  if (mlp.head != HeadKind::kMixture ||
      mlp.mixture_size != static_cast<int>(teachers.size())) {
    throw std::invalid_argument(
        "train_md_end: student must be a mixture with one component per teacher");
  }
  Mlp model = Mlp::initialized(mlp, mix_seed(seed, 0));
  AdamState state(model.param_count());
  const AdamConfig adam = adam_config(opt);
  Rng shuffle_rng(mix_seed(seed, 1));
  ad::Tape tape;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    for (const auto& batch : epoch_batches(static_cast<int>(x.cols()),
                                           opt.batch_size, shuffle_rng)) {
      tape.clear();
      const Eigen::MatrixXd xb = gather_cols(x, batch);
      std::vector<GaussianValues> members;
      members.reserve(teachers.size());
      for (const Mlp& teacher : teachers) {
        const GaussianColumns cols = teacher_columns(teacher, xb);
        members.push_back(lift_gaussian(tape, cols.mean, cols.prec_chol));
      }
      const Mlp::GraphForward gf = model.forward_graph(tape, xb);
      const std::vector<GaussianValues> components =
          mixture_head(model.config(), gf.raw);
      const ad::Value loss = ad::mean(md_end_loss_rows(members, components));
      check_loss(loss.scalar());
      tape.backward(loss);
      adam_step(model.params(), model.read_gradient(gf), state, adam);
    }
  }
  return model;
}

Mlp train_endd(const MlpConfig& mlp, const OptimizerConfig& opt,
               const AnnealSchedule& schedule, const std::vector<Mlp>& teachers,
               const Eigen::MatrixXd& x, std::uint64_t seed) {
  check_training_args(mlp, opt, x);
  check_teachers(teachers, mlp);
  const std::size_t m = teachers.size();
  Mlp model = Mlp::initialized(mlp, mix_seed(seed, 0));
  AdamState state(model.param_count());
  const AdamConfig adam = adam_config(opt);
  Rng shuffle_rng(mix_seed(seed, 1));
  ad::Tape tape;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    const double t = anneal_temperature(schedule, epoch, opt.epochs);
    for (const auto& batch : epoch_batches(static_cast<int>(x.cols()),
                                           opt.batch_size, shuffle_rng)) {
      tape.clear();
      const Eigen::MatrixXd xb = gather_cols(x, batch);
      const auto n = xb.cols();
      // Teacher predictions per example, temperature-reduced per example,
      // regrouped into per-member column blocks.
      std::vector<Eigen::MatrixXd> raws;
      raws.reserve(m);
      for (const Mlp& teacher : teachers) raws.push_back(teacher.forward_raw(xb));
      std::vector<std::vector<NormalParams>> reduced_by_member(
          m, std::vector<NormalParams>());
      for (std::size_t i = 0; i < m; ++i) {
        reduced_by_member[i].reserve(static_cast<std::size_t>(n));
      }
      for (Eigen::Index j = 0; j < n; ++j) {
        std::vector<NormalParams> at_j;
        at_j.reserve(m);
        for (std::size_t i = 0; i < m; ++i) {
          at_j.push_back(teachers[i].gaussian_from_raw(raws[i].col(j)));
        }
        std::vector<NormalParams> reduced = temperature_reduce(at_j, t);
        for (std::size_t i = 0; i < m; ++i) {
          reduced_by_member[i].push_back(std::move(reduced[i]));
        }
      }
      std::vector<GaussianValues> members;
      members.reserve(m);
      for (std::size_t i = 0; i < m; ++i) {
        const GaussianColumns cols = pack_gaussians(reduced_by_member[i]);
        members.push_back(lift_gaussian(tape, cols.mean, cols.prec_chol));
      }
      const Mlp::GraphForward gf = model.forward_graph(tape, xb);
      const NwValues omega = nw_head(model.config(), gf.raw);
      const ad::Value loss = ad::mean(endd_loss_rows(members, omega, t));
      check_loss(loss.scalar());
      tape.backward(loss);
      adam_step(model.params(), model.read_gradient(gf), state, adam);
    }
  }
  return model;
}

std::vector<Mlp> train_ensemble(const MlpConfig& mlp, const OptimizerConfig& opt,
                                int members, const Eigen::MatrixXd& x,
                                const Eigen::MatrixXd& y, std::uint64_t seed,
                                int threads) {
  if (members < 1) throw std::invalid_argument("train_ensemble: members must be >= 1");
  std::vector<std::optional<Mlp>> slots(static_cast<std::size_t>(members));
  auto train_one = [&](int i) {
    slots[static_cast<std::size_t>(i)] =
        train_gaussian_nll(mlp, opt, x, y, mix_seed(seed, 1000 + i));
  };
  if (threads <= 1 || members == 1) {
    for (int i = 0; i < members; ++i) train_one(i);
  } else {
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
      while (true) {
        const int i = next.fetch_add(1);
        if (i >= members) return;
        try {
          train_one(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    const int n_workers = std::min(threads, members);
    pool.reserve(static_cast<std::size_t>(n_workers));
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
  }
  std::vector<Mlp> out;
  out.reserve(static_cast<std::size_t>(members));
  for (auto& slot : slots) out.push_back(std::move(*slot));
  return out;
}

// ---- per-input scoring ----

namespace {

std::map<std::string, double> report_scores(const UncertaintyReport& r) {
  std::map<std::string, double> s{
      {"total_var", r.total_variance},
      {"data_var", r.expected_data_variance},
      {"knowledge_var", r.knowledge_variance},
  };
  if (r.total_entropy) s["total_entropy"] = *r.total_entropy;
  if (r.expected_data_entropy) s["data_entropy"] = *r.expected_data_entropy;
  if (r.mutual_information) s["mutual_information"] = *r.mutual_information;
  if (r.epkl) s["epkl"] = *r.epkl;
  return s;
}

}  // namespace

std::map<std::string, Eigen::VectorXd> score_inputs(
    const Mlp& model, const std::vector<Mlp>& ensemble, ModelKind kind,
    const Eigen::MatrixXd& x, Scalarization mode) {
  const auto n = x.cols();
  if (n < 1) throw std::invalid_argument("score_inputs: empty input block");
  auto scores_at = [&](Eigen::Index j) -> std::map<std::string, double> {
    const Eigen::VectorXd xi = x.col(j);
    switch (kind) {
      case ModelKind::kNwpnRkl:
      case ModelKind::kEndd:
        return report_scores(uncertainty_report(model.nw_params(xi), mode));
      case ModelKind::kEnsemble: {
        std::vector<NormalParams> members;
        members.reserve(ensemble.size());
        for (const Mlp& member : ensemble) {
          members.push_back(member.gaussian_params(xi));
        }
        return report_scores(ensemble_measures(members, mode));
      }
      case ModelKind::kMdEnd: {
        const std::vector<NormalParams> components = model.mixture_params(xi);
        if (components.size() >= 2) {
          return report_scores(ensemble_measures(components, mode));
        }
        const double v = scalarize(components.front().precision.inverse(), mode);
        return {{"total_var", v}, {"data_var", v}};
      }
      case ModelKind::kSingle:
      case ModelKind::kEnd: {
        const NormalParams p = model.gaussian_params(xi);
        const double v = scalarize(p.precision.inverse(), mode);
        return {{"total_var", v}, {"data_var", v}};
      }
    }
    throw std::invalid_argument("score_inputs: unknown model kind");
  };

  std::map<std::string, Eigen::VectorXd> out;
  for (Eigen::Index j = 0; j < n; ++j) {
    for (const auto& [key, value] : scores_at(j)) {
      auto it = out.find(key);
      if (it == out.end()) it = out.emplace(key, Eigen::VectorXd::Zero(n)).first;
      it->second(j) = value;
    }
  }
  return out;
}

// ---- drivers ----

Eigen::VectorXd mean_prediction(const Mlp& model, const std::vector<Mlp>& ensemble,
                                ModelKind kind, const Eigen::VectorXd& x) {
  switch (kind) {
    case ModelKind::kNwpnRkl:
    case ModelKind::kEndd:
      return model.nw_params(x).mean;
    case ModelKind::kSingle:
    case ModelKind::kEnd:
      return model.gaussian_params(x).mean;
    case ModelKind::kEnsemble: {
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(model.config().target_dim);
      for (const Mlp& member : ensemble) sum += member.gaussian_params(x).mean;
      return sum / static_cast<double>(ensemble.size());
    }
    case ModelKind::kMdEnd: {
      const std::vector<NormalParams> components = model.mixture_params(x);
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(components.front().mean.size());
      for (const NormalParams& c : components) sum += c.mean;
      return sum / static_cast<double>(components.size());
    }
  }
  throw std::invalid_argument("mean_prediction: unknown model kind");
}

double predictive_nll_at(const Mlp& model, const std::vector<Mlp>& ensemble,
                         ModelKind kind, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& y) {
  switch (kind) {
    case ModelKind::kNwpnRkl:
    case ModelKind::kEndd:
      return predictive_nll(posterior_predictive(model.nw_params(x)), y);
    case ModelKind::kSingle:
    case ModelKind::kEnd:
      return predictive_nll(model.gaussian_params(x), y);
    case ModelKind::kEnsemble: {
      std::vector<NormalParams> mix;
      mix.reserve(ensemble.size());
      for (const Mlp& member : ensemble) mix.push_back(member.gaussian_params(x));
      return predictive_nll(mix, y);
    }
    case ModelKind::kMdEnd:
      return predictive_nll(model.mixture_params(x), y);
  }
  throw std::invalid_argument("predictive_nll_at: unknown model kind");
}

namespace {

void write_artifact(const std::string& dir, const std::string& name,
                    const std::string& text) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_text_file((fs::path(dir) / name).string(), text);
}

}  // namespace

SyntheticResult run_synthetic(const ExperimentConfig& cfg,
                              const std::vector<Mlp>* teachers) {
  if (cfg.dataset.kind != "synthetic") {
    throw std::invalid_argument("run_synthetic: dataset.kind must be 'synthetic'");
  }
  const Dataset train = synth_generate(cfg.dataset.train_size, mix_seed(cfg.seed, 10));
  const Dataset ood = synth_ood(cfg.dataset.ood_size, mix_seed(cfg.seed, 11));
  const Eigen::MatrixXd x = train.inputs.transpose();
  const Eigen::MatrixXd y = train.targets.transpose();
  const Eigen::MatrixXd ood_x = ood.inputs.transpose();
  const MlpConfig mlp = cfg.mlp_config(1, 1);
  const MlpConfig teacher_mlp = [&] {
    MlpConfig t = mlp;
    t.head = HeadKind::kGaussian;
    t.mixture_size = 1;
    return t;
  }();
  log_info("run_synthetic: model " + to_string(cfg.model) + ", n = " +
           std::to_string(train.n()));

  std::vector<Mlp> members;
  const bool needs_teachers = cfg.model == ModelKind::kEnd ||
                              cfg.model == ModelKind::kMdEnd ||
                              cfg.model == ModelKind::kEndd;
  if (cfg.model == ModelKind::kEnsemble || (needs_teachers && teachers == nullptr)) {
    members = train_ensemble(teacher_mlp, cfg.optimizer, cfg.ensemble_size, x, y,
                             mix_seed(cfg.seed, 20), cfg.threads);
  } else if (needs_teachers) {
    members = *teachers;
    check_teachers(members, mlp);
  }

  Mlp model = [&]() -> Mlp {
    switch (cfg.model) {
      case ModelKind::kSingle:
        return train_gaussian_nll(mlp, cfg.optimizer, x, y, mix_seed(cfg.seed, 21));
      case ModelKind::kEnsemble:
        return members.front();
      case ModelKind::kNwpnRkl: {
        const PriorConfig prior{prior_from_data(train.targets, cfg.prior.kappa0),
                                cfg.prior.beta_in, cfg.prior.gamma};
        return train_nwpn_rkl(mlp, cfg.optimizer, prior, x, y, ood_x,
                              mix_seed(cfg.seed, 21));
      }
      case ModelKind::kEnd:
        return train_end(mlp, cfg.optimizer, members, x, mix_seed(cfg.seed, 21));
      case ModelKind::kMdEnd:
        return train_md_end(mlp, cfg.optimizer, members, x, mix_seed(cfg.seed, 21));
      case ModelKind::kEndd: {
        // Distillation inputs: the training inputs plus a noise-augmented
        // copy; teacher outputs are recomputed per batch on both.
        const Dataset noisy = gaussian_input_noise(
            train, cfg.distillation.input_noise_sigma, mix_seed(cfg.seed, 22));
        Eigen::MatrixXd x_aug(x.rows(), 2 * x.cols());
        x_aug << x, noisy.inputs.transpose();
        return train_endd(mlp, cfg.optimizer, cfg.distillation.schedule(), members,
                          x_aug, mix_seed(cfg.seed, 21));
      }
    }
    throw std::invalid_argument("run_synthetic: unknown model kind");
  }();

  // Uncertainty curves on the dense grid.
  SyntheticResult result{std::move(model), std::move(members),
                         Eigen::VectorXd::LinSpaced(601, -30.0, 30.0),
                         Eigen::MatrixXd(), {}, ""};
  const Eigen::MatrixXd grid_x = result.grid.transpose();
  const auto scores = score_inputs(result.model, result.ensemble, cfg.model, grid_x);
  result.curve_names.push_back("mean");
  for (const auto& [key, _] : scores) result.curve_names.push_back(key);
  result.curves.resize(result.grid.size(),
                       static_cast<Eigen::Index>(result.curve_names.size()));
  for (Eigen::Index j = 0; j < result.grid.size(); ++j) {
    result.curves(j, 0) = mean_prediction(result.model, result.ensemble, cfg.model,
                                          grid_x.col(j))(0);
  }
  Eigen::Index col = 1;
  for (const auto& [_, series] : scores) result.curves.col(col++) = series;
  result.manifest = manifest_json(cfg, "run-synthetic");

  if (!cfg.output_dir.empty()) {
    std::ostringstream csv;
    csv.precision(17);
    csv << "x";
    for (const std::string& name : result.curve_names) csv << "," << name;
    csv << "\n";
    for (Eigen::Index j = 0; j < result.grid.size(); ++j) {
      csv << result.grid(j);
      for (Eigen::Index c = 0; c < result.curves.cols(); ++c) {
        csv << "," << result.curves(j, c);
      }
      csv << "\n";
    }
    write_artifact(cfg.output_dir, "curves.csv", csv.str());
    write_artifact(cfg.output_dir, "checkpoint.json",
                   checkpoint_to_json(result.model));
    if (!result.ensemble.empty()) {
      write_artifact(cfg.output_dir, "ensemble.json",
                     ensemble_checkpoint_to_json(result.ensemble));
    }
    write_artifact(cfg.output_dir, "train.json", dataset_to_json(train));
    write_artifact(cfg.output_dir, "manifest.json", result.manifest);
  }
  return result;
}

// ---- tabular protocol ----

namespace {

struct FoldOutput {
  FoldMetrics metrics;
  std::string checkpoint;
  std::string ensemble_checkpoint;
};

Aggregate aggregate_over(const std::vector<double>& values) {
  Aggregate a;
  const auto n = static_cast<double>(values.size());
  for (double v : values) a.mean += v;
  a.mean /= n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.std = std::sqrt(ss / (n - 1.0));
  }
  return a;
}

}  // namespace

std::string TabularResult::to_json() const {
  auto agg = [](const Aggregate& a) {
    return json{{"mean", a.mean}, {"std", a.std}};
  };
  json per_fold_json = json::array();
  for (const FoldMetrics& f : per_fold) {
    json measures_prr(f.prr);
    json measures_auc(f.auc_roc);
    per_fold_json.push_back(json{{"rmse", f.rmse},
                                 {"nll", f.nll},
                                 {"prr", measures_prr},
                                 {"auc_roc", measures_auc}});
  }
  json prr_json, auc_json;
  for (const auto& [key, value] : prr) prr_json[key] = agg(value);
  for (const auto& [key, value] : auc_roc) auc_json[key] = agg(value);
  const json j{
      {"folds", per_fold.size()}, {"rmse", agg(rmse)},      {"nll", agg(nll)},
      {"prr", prr_json},          {"auc_roc", auc_json},    {"per_fold", per_fold_json},
  };
  return j.dump(2);
}

TabularResult run_tabular(const ExperimentConfig& cfg) {
  if (cfg.dataset.kind != "csv") {
    throw std::invalid_argument("run_tabular: dataset.kind must be 'csv'");
  }
  const bool distillation = cfg.model == ModelKind::kEnd ||
                            cfg.model == ModelKind::kMdEnd ||
                            cfg.model == ModelKind::kEndd;
  if (distillation && cfg.distillation.teacher_checkpoint.empty()) {
    throw std::invalid_argument(
        "run_tabular: distillation modes need distillation.teacher_checkpoint "
        "(an output directory of a prior ensemble run)");
  }
  const Dataset full = csv_ingest(cfg.dataset.path, cfg.dataset.csv_schema());
  const std::vector<DatasetSplit> folds = kfold(full, cfg.folds, mix_seed(cfg.seed, 1));
  const int dim = static_cast<int>(full.input_dim());
  const int target_dim = static_cast<int>(full.target_dim());
  log_info("run_tabular: " + cfg.dataset.path + ", n = " + std::to_string(full.n()) +
           ", d = " + std::to_string(dim));

  auto run_fold = [&](int f) -> FoldOutput {
    const std::uint64_t fold_seed = mix_seed(cfg.seed, 100 + f);
    const StandardizeResult std_sets = standardize(folds[f].train, {folds[f].test});
    const Dataset& strain = std_sets.train;
    const Dataset& stest = std_sets.others[0];
    const Eigen::MatrixXd x = strain.inputs.transpose();
    const Eigen::MatrixXd y = strain.targets.transpose();
    const Eigen::MatrixXd test_x = stest.inputs.transpose();

    // FA OOD sets live in standardized input space by construction.
    const int latent = cfg.fa.latent_dim > 0
                           ? cfg.fa.latent_dim
                           : std::max(1, std::min(dim - 1, 5));
    const FactorAnalysisModel fa =
        fa_fit(strain.inputs, latent, cfg.fa.iters, mix_seed(fold_seed, 1));
    const Dataset ood_eval = fa_sample_ood(fa, static_cast<int>(stest.n()),
                                           cfg.fa.scale, mix_seed(fold_seed, 3));
    const MlpConfig mlp = cfg.mlp_config(dim, target_dim);

    std::vector<Mlp> members;
    if (cfg.model == ModelKind::kEnsemble) {
      members = train_ensemble(mlp, cfg.optimizer, cfg.ensemble_size, x, y,
                               fold_seed, 1);
    } else if (distillation) {
      namespace fs = std::filesystem;
      const fs::path path = fs::path(cfg.distillation.teacher_checkpoint) /
                            ("fold" + std::to_string(f)) / "ensemble.json";
      if (!fs::exists(path)) {
        throw std::invalid_argument("run_tabular: missing ensemble artifact " +
                                    path.string());
      }
      members = ensemble_checkpoint_from_json(load_text_file(path.string()));
      check_teachers(members, mlp);
    }

    Mlp model = [&]() -> Mlp {
      switch (cfg.model) {
        case ModelKind::kSingle:
          return train_gaussian_nll(mlp, cfg.optimizer, x, y, mix_seed(fold_seed, 4));
        case ModelKind::kEnsemble:
          return members.front();
        case ModelKind::kNwpnRkl: {
          const Dataset ood_train = fa_sample_ood(fa, static_cast<int>(strain.n()),
                                                  cfg.fa.scale, mix_seed(fold_seed, 2));
          const PriorConfig prior{prior_from_data(strain.targets, cfg.prior.kappa0),
                                  cfg.prior.beta_in, cfg.prior.gamma};
          return train_nwpn_rkl(mlp, cfg.optimizer, prior, x, y,
                                ood_train.inputs.transpose(), mix_seed(fold_seed, 4));
        }
        case ModelKind::kEnd:
          return train_end(mlp, cfg.optimizer, members, x, mix_seed(fold_seed, 4));
        case ModelKind::kMdEnd:
          return train_md_end(mlp, cfg.optimizer, members, x, mix_seed(fold_seed, 4));
        case ModelKind::kEndd:
          return train_endd(mlp, cfg.optimizer, cfg.distillation.schedule(), members,
                            x, mix_seed(fold_seed, 4));
      }
      throw std::invalid_argument("run_tabular: unknown model kind");
    }();

    // Metrics in original target units: predictions are de-standardized,
    // and densities pick up +sum(ln std_y) from the change of variables.
    const double log_std_sum = stest.target_stats.valid()
                                   ? stest.target_stats.std.array().log().sum()
                                   : 0.0;
    const auto n_test = stest.n();
    Eigen::MatrixXd pred(n_test, target_dim);
    double nll_sum = 0.0;
    std::vector<double> errors(static_cast<std::size_t>(n_test));
    for (Eigen::Index j = 0; j < n_test; ++j) {
      const Eigen::VectorXd xi = test_x.col(j);
      const Eigen::VectorXd yi = stest.targets.row(j).transpose();
      const Eigen::VectorXd mean_std =
          mean_prediction(model, members, cfg.model, xi);
      pred.row(j) = destandardize_targets(stest.target_stats, mean_std).transpose();
      nll_sum += predictive_nll_at(model, members, cfg.model, xi, yi) + log_std_sum;
      errors[static_cast<std::size_t>(j)] =
          (pred.row(j) - folds[f].test.targets.row(j)).squaredNorm();
    }

    FoldOutput out;
    out.metrics.rmse = rmse(pred, folds[f].test.targets);
    out.metrics.nll = nll_sum / static_cast<double>(n_test);

    const auto test_scores = score_inputs(model, members, cfg.model, test_x);
    const auto ood_scores =
        score_inputs(model, members, cfg.model, ood_eval.inputs.transpose());
    for (const auto& [measure, series] : test_scores) {
      const std::vector<double> scores(series.data(), series.data() + series.size());
      try {
        out.metrics.prr[measure] = prr(rejection_curve(errors, scores));
      } catch (const std::domain_error&) {
        // Degenerate fold (all errors equal); leave the measure out.
      }
      const Eigen::VectorXd& ood_series = ood_scores.at(measure);
      out.metrics.auc_roc[measure] = auc_roc(
          scores,
          std::vector<double>(ood_series.data(), ood_series.data() + ood_series.size()));
    }
    out.checkpoint = checkpoint_to_json(model);
    if (!members.empty()) out.ensemble_checkpoint = ensemble_checkpoint_to_json(members);
    return out;
  };

  std::vector<std::optional<FoldOutput>> slots(folds.size());
  if (cfg.threads <= 1) {
    for (std::size_t f = 0; f < folds.size(); ++f) {
      slots[f] = run_fold(static_cast<int>(f));
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
      while (true) {
        const std::size_t f = next.fetch_add(1);
        if (f >= folds.size()) return;
        try {
          slots[f] = run_fold(static_cast<int>(f));
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    const int n_workers = std::min<int>(cfg.threads, static_cast<int>(folds.size()));
    pool.reserve(static_cast<std::size_t>(n_workers));
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
  }

  TabularResult result;
  std::vector<double> rmses, nlls;
  std::map<std::string, std::vector<double>> prrs, aucs;
  for (const auto& slot : slots) {
    result.per_fold.push_back(slot->metrics);
    rmses.push_back(slot->metrics.rmse);
    nlls.push_back(slot->metrics.nll);
    for (const auto& [key, value] : slot->metrics.prr) prrs[key].push_back(value);
    for (const auto& [key, value] : slot->metrics.auc_roc) aucs[key].push_back(value);
  }
  result.rmse = aggregate_over(rmses);
  result.nll = aggregate_over(nlls);
  for (const auto& [key, values] : prrs) result.prr[key] = aggregate_over(values);
  for (const auto& [key, values] : aucs) result.auc_roc[key] = aggregate_over(values);
  result.manifest = manifest_json(cfg, "run-tabular");

  if (!cfg.output_dir.empty()) {
    namespace fs = std::filesystem;
    for (std::size_t f = 0; f < slots.size(); ++f) {
      const std::string fold_dir =
          (fs::path(cfg.output_dir) / ("fold" + std::to_string(f))).string();
      write_artifact(fold_dir, "checkpoint.json", slots[f]->checkpoint);
      if (!slots[f]->ensemble_checkpoint.empty()) {
        write_artifact(fold_dir, "ensemble.json", slots[f]->ensemble_checkpoint);
      }
    }
    write_artifact(cfg.output_dir, "metrics.json", result.to_json());
    write_artifact(cfg.output_dir, "manifest.json", result.manifest);
  }
  return result;
}

}  // namespace rpn
