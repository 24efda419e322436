// Microbenchmarks for the hot paths: scalar special functions, closed-form
// densities and uncertainty measures, the Bartlett sampler, one training
// step of the reverse-KL objective, and the rejection-curve sweep.

#include <benchmark/benchmark.h>

#include <Eigen/Dense>

#include <random>
#include <vector>

#include "rpn/distributions.hpp"
#include "rpn/eval.hpp"
#include "rpn/graph.hpp"
#include "rpn/graph_losses.hpp"
#include "rpn/losses.hpp"
#include "rpn/nn.hpp"
#include "rpn/rng.hpp"
#include "rpn/special.hpp"
#include "rpn/sympd.hpp"
#include "rpn/uncertainty.hpp"

namespace {

rpn::NormalWishartParams example_nw(int k) {
  Eigen::MatrixXd scale = Eigen::MatrixXd::Identity(k, k);
  for (int i = 0; i < k; ++i) {
    scale(i, i) = 0.8 + 0.3 * i;
    for (int j = 0; j < i; ++j) scale(i, j) = scale(j, i) = 0.1;
  }
  return rpn::NormalWishartParams{Eigen::VectorXd::LinSpaced(k, -0.5, 0.5),
                                  rpn::SymPd::from_dense(scale), 2.5,
                                  k + 4.5};
}

void bm_digamma(benchmark::State& state) {
  double x = 0.1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(rpn::digamma(x));
    x += 0.1;
    if (x > 50.0) x = 0.1;
  }
}
BENCHMARK(bm_digamma);

void bm_log_multivariate_gamma(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  double a = 0.5 * (k + 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(rpn::log_multivariate_gamma(a, k));
  }
}
BENCHMARK(bm_log_multivariate_gamma)->Arg(1)->Arg(3);

void bm_nw_log_pdf(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  const rpn::NormalWishartParams p = example_nw(k);
  rpn::Rng rng(1);
  const rpn::NwSample draw = rpn::sample_nw(p, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(rpn::nw_log_pdf(p, draw.mean, draw.precision));
  }
}
BENCHMARK(bm_nw_log_pdf)->Arg(1)->Arg(3);

void bm_sample_wishart(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  const rpn::WishartParams p{rpn::SymPd::identity(k), k + 3.0};
  rpn::Rng rng(7);
  for (auto _ : state) {
    benchmark::DoNotOptimize(rpn::sample_wishart(p, rng));
  }
}
BENCHMARK(bm_sample_wishart)->Arg(1)->Arg(3);

void bm_kl_nw(benchmark::State& state) {
  const rpn::NormalWishartParams p = example_nw(2);
  rpn::NormalWishartParams q = example_nw(2);
  q.kappa = 1.0;
  q.nu = 7.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(rpn::kl_nw(p, q));
  }
}
BENCHMARK(bm_kl_nw);

void bm_uncertainty_report(benchmark::State& state) {
  const rpn::NormalWishartParams p = example_nw(2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(rpn::uncertainty_report(p));
  }
}
BENCHMARK(bm_uncertainty_report);

// One full reverse-KL training step (forward, tape build, backward, Adam)
// on a synthetic-benchmark-sized batch: 1 input, 30x30 hidden, NW head.
void bm_rkl_training_step(benchmark::State& state) {
  rpn::MlpConfig cfg;
  cfg.input_dim = 1;
  cfg.hidden = {30, 30};
  cfg.head = rpn::HeadKind::kNormalWishart;
  cfg.target_dim = 1;
  rpn::Mlp model = rpn::Mlp::initialized(cfg, 3);
  rpn::AdamState opt_state(model.param_count());
  const rpn::AdamConfig adam{1e-2, 0.9, 0.999, 1e-8, 1e-4};

  rpn::Rng rng(5);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int batch = 128;
  Eigen::MatrixXd x(1, batch), y(1, batch);
  Eigen::MatrixXd targets(64, 1);
  for (int j = 0; j < batch; ++j) {
    x(0, j) = 10.0 * std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
    y(0, j) = std::sin(x(0, j)) + 0.3 * normal(rng);
  }
  for (int j = 0; j < 64; ++j) targets(j, 0) = normal(rng);
  const rpn::NormalWishartParams prior = rpn::prior_from_data(targets, 1e-2);

  rpn::ad::Tape tape;
  for (auto _ : state) {
    tape.clear();
    const rpn::Mlp::GraphForward gf = model.forward_graph(tape, x);
    const rpn::ad::Value loss = rpn::ad::mean(rpn::rkl_loss_rows(
        rpn::nw_head(cfg, gf.raw), tape.constant(y), 100.0, prior));
    tape.backward(loss);
    Eigen::VectorXd grad = model.read_gradient(gf);
    rpn::adam_step(model.params(), grad, opt_state, adam);
    benchmark::DoNotOptimize(model.params());
  }
}
BENCHMARK(bm_rkl_training_step);

void bm_rejection_curve(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  rpn::Rng rng(9);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> errors(n), scores(n);
  for (int i = 0; i < n; ++i) {
    const double z = normal(rng);
    errors[i] = z * z;
    scores[i] = errors[i] + 0.5 * normal(rng);
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(rpn::rejection_curve(errors, scores));
  }
}
BENCHMARK(bm_rejection_curve)->Arg(256)->Arg(4096);

}  // namespace

BENCHMARK_MAIN();
