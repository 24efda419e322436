#pragma once

// Fully-connected ReLU networks with distribution-valued heads: a Gaussian
// head (mean + precision Cholesky), a Normal-Wishart head (mean, scale
// Cholesky, kappa, nu), and a mixture-of-Gaussians head for
// member-matching distillation.  Raw head outputs are mapped to valid
// parameters with softplus transforms and explicit floors; the same scalar
// transforms run in the plain evaluation path and on the autodiff tape, so
// the two paths agree bitwise.

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "rpn/distributions.hpp"
#include "rpn/graph.hpp"

namespace rpn {

enum class HeadKind { kGaussian, kNormalWishart, kMixture };

struct MlpConfig {
  int input_dim = 1;
  std::vector<int> hidden = {30, 30};
  HeadKind head = HeadKind::kNormalWishart;
  int target_dim = 1;     // K
  int mixture_size = 1;   // number of components for kMixture
  double kappa_floor = 1e-3;
  double nu_epsilon = 1e-2;  // nu is floored at K + 1 + nu_epsilon
  double chol_floor = 1e-4;  // Cholesky diagonal floor
};

// Number of raw outputs the head consumes.
int head_raw_dim(const MlpConfig& cfg);

class Mlp {
 public:
  explicit Mlp(MlpConfig cfg);

  // He-initialized weights (std sqrt(2/fan_in)), zero biases, except the
  // raw kappa/nu biases which start at softplus^{-1}(1) so the initial head
  // emits kappa ~ 1 + floor and nu ~ K + 2 + epsilon.
  static Mlp initialized(MlpConfig cfg, std::uint64_t seed);

  const MlpConfig& config() const { return cfg_; }
  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }
  Eigen::Index param_count() const { return params_.size(); }

  // Raw head outputs for a batch given column-wise inputs (D x N) -> (R x N).
  Eigen::MatrixXd forward_raw(const Eigen::MatrixXd& x) const;
  // Single-input convenience (delegates to the batched path).
  Eigen::VectorXd forward_raw(const Eigen::VectorXd& x) const;

  // Graph forward: parameters become tape inputs (recorded in param_nodes in
  // flattening order), inputs become a constant; returns the raw output node.
  struct GraphForward {
    ad::Value raw;
    std::vector<ad::Value> param_nodes;
  };
  GraphForward forward_graph(ad::Tape& tape, const Eigen::MatrixXd& x) const;

  // Flattens the parameter adjoints of a prior forward_graph call (after
  // Tape::backward) into the same layout as params().
  Eigen::VectorXd read_gradient(const GraphForward& gf) const;

  // --- interpreted heads (plain evaluation path) ---
  NormalWishartParams nw_params(const Eigen::VectorXd& x) const;
  NormalParams gaussian_params(const Eigen::VectorXd& x) const;
  std::vector<NormalParams> mixture_params(const Eigen::VectorXd& x) const;

  // Interprets a raw head column without running the network (used to share
  // the transform between eval paths).
  NormalWishartParams nw_from_raw(const Eigen::VectorXd& raw) const;
  NormalParams gaussian_from_raw(const Eigen::VectorXd& raw) const;
  std::vector<NormalParams> mixture_from_raw(const Eigen::VectorXd& raw) const;

  // Shapes of each parameter tensor in flattening order: layer weights are
  // row-major (rows x cols), each followed by its bias column.
  struct TensorShape {
    Eigen::Index rows, cols, offset;
  };
  const std::vector<TensorShape>& tensor_shapes() const { return shapes_; }

 private:
  MlpConfig cfg_;
  std::vector<TensorShape> shapes_;
  Eigen::VectorXd params_;

  Eigen::MatrixXd tensor(int t) const;  // materialize tensor t from the flat vector
};

// ---- Adam with coupled L2 weight decay: the decay term is added to the
// gradient before the moment updates (not decoupled). ----
struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  Eigen::VectorXd m, v;
  long t = 0;
  explicit AdamState(Eigen::Index n)
      : m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)) {}
};

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad,
               AdamState& state, const AdamConfig& cfg);

// ---- checkpoints: versioned JSON container, bitwise round-trip ----
std::string checkpoint_to_json(const Mlp& model);
Mlp checkpoint_from_json(const std::string& text);
std::string ensemble_checkpoint_to_json(const std::vector<Mlp>& members);
std::vector<Mlp> ensemble_checkpoint_from_json(const std::string& text);

void save_text_file(const std::string& path, const std::string& text);
std::string load_text_file(const std::string& path);

}  // namespace rpn
