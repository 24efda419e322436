#include "rpn/nn.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "rpn/rng.hpp"
#include "rpn/special.hpp"

namespace rpn {
namespace {

int chol_len(int k) { return k * (k + 1) / 2; }

void check_head_config(const MlpConfig& cfg) {
  if (cfg.input_dim < 1 || cfg.target_dim < 1) {
    throw std::invalid_argument("MlpConfig: input_dim and target_dim must be >= 1");
  }
  for (int h : cfg.hidden) {
    if (h < 1) throw std::invalid_argument("MlpConfig: hidden widths must be >= 1");
  }
  if (cfg.head == HeadKind::kMixture && cfg.mixture_size < 1) {
    throw std::invalid_argument("MlpConfig: mixture_size must be >= 1");
  }
}

// Builds the lower Cholesky factor of a head's matrix parameter from raw
// entries (row-major lower triangle): softplus + floor on the diagonal,
// off-diagonals pass through.
Eigen::MatrixXd chol_from_raw(const Eigen::VectorXd& raw, int offset, int k,
                              double floor) {
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(k, k);
  int idx = offset;
  for (int r = 0; r < k; ++r) {
    for (int c = 0; c <= r; ++c, ++idx) {
      l(r, c) = (r == c) ? softplus(raw(idx)) + floor : raw(idx);
    }
  }
  return l;
}

}  // namespace

int head_raw_dim(const MlpConfig& cfg) {
  const int k = cfg.target_dim;
  switch (cfg.head) {
    case HeadKind::kGaussian:
      return k + chol_len(k);
    case HeadKind::kNormalWishart:
      return k + chol_len(k) + 2;
    case HeadKind::kMixture:
      return cfg.mixture_size * (k + chol_len(k));
  }
  throw std::invalid_argument("head_raw_dim: unknown head kind");
}

Mlp::Mlp(MlpConfig cfg) : cfg_(std::move(cfg)) {
  check_head_config(cfg_);
  Eigen::Index offset = 0;
  int in = cfg_.input_dim;
  auto add_layer = [&](int out) {
    shapes_.push_back({out, in, offset});
    offset += static_cast<Eigen::Index>(out) * in;
    shapes_.push_back({out, 1, offset});
    offset += out;
    in = out;
  };
  for (int h : cfg_.hidden) add_layer(h);
  add_layer(head_raw_dim(cfg_));
  params_ = Eigen::VectorXd::Zero(offset);
}

Mlp Mlp::initialized(MlpConfig cfg, std::uint64_t seed) {
  Mlp model(std::move(cfg));
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  // Tensors alternate weight, bias; weights get He initialization.
  for (std::size_t t = 0; t < model.shapes_.size(); t += 2) {
    const TensorShape& w = model.shapes_[t];
    const double std_dev = std::sqrt(2.0 / static_cast<double>(w.cols));
    for (Eigen::Index i = 0; i < w.rows * w.cols; ++i) {
      model.params_(w.offset + i) = std_dev * gauss(rng);
    }
  }
  if (model.cfg_.head == HeadKind::kNormalWishart) {
    // Bias the raw kappa/nu outputs so the initial head is near kappa = 1,
    // nu = K + 2 + epsilon rather than at the floors.
    const TensorShape& bias = model.shapes_.back();
    const double b0 = softplus_inverse(1.0);
    model.params_(bias.offset + bias.rows - 2) = b0;
    model.params_(bias.offset + bias.rows - 1) = b0;
  }
  return model;
}

Eigen::MatrixXd Mlp::tensor(int t) const {
  const TensorShape& s = shapes_.at(static_cast<std::size_t>(t));
  Eigen::MatrixXd m(s.rows, s.cols);
  for (Eigen::Index r = 0; r < s.rows; ++r) {
    for (Eigen::Index c = 0; c < s.cols; ++c) {
      m(r, c) = params_(s.offset + r * s.cols + c);  // row-major flattening
    }
  }
  return m;
}

Eigen::MatrixXd Mlp::forward_raw(const Eigen::MatrixXd& x) const {
  if (x.rows() != cfg_.input_dim) {
    throw std::invalid_argument("Mlp::forward_raw: input rows != input_dim");
  }
  Eigen::MatrixXd h = x;
  const int n_layers = static_cast<int>(shapes_.size() / 2);
  for (int layer = 0; layer < n_layers; ++layer) {
    const Eigen::MatrixXd w = tensor(2 * layer);
    const Eigen::MatrixXd b = tensor(2 * layer + 1);
    h = ((w * h).colwise() + b.col(0)).eval();
    if (layer + 1 < n_layers) h = h.cwiseMax(0.0);
  }
  return h;
}

Eigen::VectorXd Mlp::forward_raw(const Eigen::VectorXd& x) const {
  return forward_raw(Eigen::MatrixXd(x)).col(0);
}

Mlp::GraphForward Mlp::forward_graph(ad::Tape& tape, const Eigen::MatrixXd& x) const {
  if (x.rows() != cfg_.input_dim) {
    throw std::invalid_argument("Mlp::forward_graph: input rows != input_dim");
  }
  GraphForward gf;
  ad::Value h = tape.constant(x);
  const int n_layers = static_cast<int>(shapes_.size() / 2);
  for (int layer = 0; layer < n_layers; ++layer) {
    ad::Value w = tape.input(tensor(2 * layer));
    ad::Value b = tape.input(tensor(2 * layer + 1));
    gf.param_nodes.push_back(w);
    gf.param_nodes.push_back(b);
    h = ad::add_bias(ad::matmul(w, h), b);
    if (layer + 1 < n_layers) h = ad::relu(h);
  }
  gf.raw = h;
  return gf;
}

Eigen::VectorXd Mlp::read_gradient(const GraphForward& gf) const {
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(params_.size());
  for (std::size_t t = 0; t < shapes_.size(); ++t) {
    const TensorShape& s = shapes_[t];
    const Eigen::MatrixXd& adj = gf.param_nodes.at(t).grad();
    for (Eigen::Index r = 0; r < s.rows; ++r) {
      for (Eigen::Index c = 0; c < s.cols; ++c) {
        grad(s.offset + r * s.cols + c) = adj(r, c);
      }
    }
  }
  return grad;
}

NormalWishartParams Mlp::nw_from_raw(const Eigen::VectorXd& raw) const {
  if (cfg_.head != HeadKind::kNormalWishart) {
    throw std::invalid_argument("nw_from_raw: model head is not Normal-Wishart");
  }
  const int k = cfg_.target_dim;
  NormalWishartParams p{
      raw.head(k),
      SymPd::from_cholesky(chol_from_raw(raw, k, k, cfg_.chol_floor)),
      softplus(raw(k + chol_len(k))) + cfg_.kappa_floor,
      softplus(raw(k + chol_len(k) + 1)) + k + 1 + cfg_.nu_epsilon,
  };
  return p;
}

NormalParams Mlp::gaussian_from_raw(const Eigen::VectorXd& raw) const {
  if (cfg_.head != HeadKind::kGaussian) {
    throw std::invalid_argument("gaussian_from_raw: model head is not Gaussian");
  }
  const int k = cfg_.target_dim;
  return NormalParams{
      raw.head(k),
      SymPd::from_cholesky(chol_from_raw(raw, k, k, cfg_.chol_floor)),
  };
}

std::vector<NormalParams> Mlp::mixture_from_raw(const Eigen::VectorXd& raw) const {
  if (cfg_.head != HeadKind::kMixture) {
    throw std::invalid_argument("mixture_from_raw: model head is not a mixture");
  }
  const int k = cfg_.target_dim;
  const int stride = k + chol_len(k);
  std::vector<NormalParams> components;
  components.reserve(static_cast<std::size_t>(cfg_.mixture_size));
  for (int m = 0; m < cfg_.mixture_size; ++m) {
    const int base = m * stride;
    components.push_back(NormalParams{
        raw.segment(base, k),
        SymPd::from_cholesky(chol_from_raw(raw, base + k, k, cfg_.chol_floor)),
    });
  }
  return components;
}

NormalWishartParams Mlp::nw_params(const Eigen::VectorXd& x) const {
  return nw_from_raw(forward_raw(x));
}

NormalParams Mlp::gaussian_params(const Eigen::VectorXd& x) const {
  return gaussian_from_raw(forward_raw(x));
}

std::vector<NormalParams> Mlp::mixture_params(const Eigen::VectorXd& x) const {
  return mixture_from_raw(forward_raw(x));
}

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad,
               AdamState& state, const AdamConfig& cfg) {
  if (params.size() != grad.size() || params.size() != state.m.size()) {
    throw std::invalid_argument("adam_step: size mismatch");
  }
  const Eigen::VectorXd g = grad + cfg.weight_decay * params;
  ++state.t;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * g;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  const Eigen::ArrayXd denom = (state.v / c2).array().sqrt() + cfg.epsilon;
  params.array() -= (cfg.lr / c1) * state.m.array() / denom;
}

// ---- checkpoints ----

namespace {

constexpr const char* kCheckpointFormat = "nwpn-checkpoint";
constexpr int kCheckpointVersion = 1;

nlohmann::json config_to_json(const MlpConfig& cfg) {
  const char* head = cfg.head == HeadKind::kGaussian        ? "gaussian"
                     : cfg.head == HeadKind::kNormalWishart ? "normal_wishart"
                                                            : "mixture";
  return nlohmann::json{
      {"input_dim", cfg.input_dim},     {"hidden", cfg.hidden},
      {"head", head},                   {"target_dim", cfg.target_dim},
      {"mixture_size", cfg.mixture_size},
      {"kappa_floor", cfg.kappa_floor}, {"nu_epsilon", cfg.nu_epsilon},
      {"chol_floor", cfg.chol_floor},
  };
}

MlpConfig config_from_json(const nlohmann::json& j) {
  MlpConfig cfg;
  cfg.input_dim = j.at("input_dim").get<int>();
  cfg.hidden = j.at("hidden").get<std::vector<int>>();
  const std::string head = j.at("head").get<std::string>();
  if (head == "gaussian") {
    cfg.head = HeadKind::kGaussian;
  } else if (head == "normal_wishart") {
    cfg.head = HeadKind::kNormalWishart;
  } else if (head == "mixture") {
    cfg.head = HeadKind::kMixture;
  } else {
    throw std::runtime_error("checkpoint: unknown head kind '" + head + "'");
  }
  cfg.target_dim = j.at("target_dim").get<int>();
  cfg.mixture_size = j.at("mixture_size").get<int>();
  cfg.kappa_floor = j.at("kappa_floor").get<double>();
  cfg.nu_epsilon = j.at("nu_epsilon").get<double>();
  cfg.chol_floor = j.at("chol_floor").get<double>();
  return cfg;
}

nlohmann::json header_json() {
  return nlohmann::json{{"format", kCheckpointFormat}, {"version", kCheckpointVersion}};
}

void check_header(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", "") != kCheckpointFormat) {
    throw std::runtime_error("checkpoint: unrecognized container format");
  }
  if (j.value("version", -1) != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(j.value("version", -1)));
  }
}

std::vector<double> to_std(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

}  // namespace

std::string checkpoint_to_json(const Mlp& model) {
  nlohmann::json j = header_json();
  j["config"] = config_to_json(model.config());
  j["params"] = to_std(model.params());
  return j.dump();
}

Mlp checkpoint_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  check_header(j);
  Mlp model(config_from_json(j.at("config")));
  const auto params = j.at("params").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(params.size()) != model.param_count()) {
    throw std::runtime_error("checkpoint: parameter count mismatch");
  }
  model.params() = Eigen::Map<const Eigen::VectorXd>(params.data(),
                                                     static_cast<Eigen::Index>(params.size()));
  return model;
}

std::string ensemble_checkpoint_to_json(const std::vector<Mlp>& members) {
  if (members.empty()) {
    throw std::invalid_argument("ensemble_checkpoint_to_json: empty ensemble");
  }
  nlohmann::json j = header_json();
  j["config"] = config_to_json(members.front().config());
  nlohmann::json list = nlohmann::json::array();
  for (const Mlp& m : members) list.push_back(to_std(m.params()));
  j["members"] = std::move(list);
  return j.dump();
}

std::vector<Mlp> ensemble_checkpoint_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  check_header(j);
  const MlpConfig cfg = config_from_json(j.at("config"));
  std::vector<Mlp> members;
  for (const auto& entry : j.at("members")) {
    Mlp model(cfg);
    const auto params = entry.get<std::vector<double>>();
    if (static_cast<Eigen::Index>(params.size()) != model.param_count()) {
      throw std::runtime_error("checkpoint: member parameter count mismatch");
    }
    model.params() = Eigen::Map<const Eigen::VectorXd>(
        params.data(), static_cast<Eigen::Index>(params.size()));
    members.push_back(std::move(model));
  }
  if (members.empty()) throw std::runtime_error("checkpoint: no members");
  return members;
}

void save_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::string load_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace rpn
