#include "rpn/graph_losses.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "rpn/special.hpp"

namespace rpn {
namespace {

using ad::Value;

constexpr double kLnPi = 1.1447298858494001741434273513531;
constexpr double kLn2Pi = 1.8378770664093454835606594728112;
constexpr double kLn2 = 0.69314718055994530941723212145818;

int chol_len(int k) { return k * (k + 1) / 2; }

// Index of entry (r, c), c <= r, in row-major lower-triangle storage.
int lower_index(int r, int c) { return r * (r + 1) / 2 + c; }

// ln|C C^T| = 2 sum_i ln C_ii.
Value logdet_chol(const std::vector<Value>& chol, int k) {
  Value s = ad::log(chol[lower_index(0, 0)]);
  for (int r = 1; r < k; ++r) s = s + ad::log(chol[lower_index(r, r)]);
  return 2.0 * s;
}

// d^T (C C^T) d = |C^T d|^2, one squared column sum per column of C.
Value quad_form_chol(const std::vector<Value>& chol, int k,
                     const std::vector<Value>& d) {
  Value q;
  for (int j = 0; j < k; ++j) {
    Value s = chol[lower_index(j, j)] * d[j];
    for (int i = j + 1; i < k; ++i) s = s + chol[lower_index(i, j)] * d[i];
    q = (j == 0) ? ad::square(s) : q + ad::square(s);
  }
  return q;
}

// Forward substitution C x = b for a lower factor held as nodes.  b holds
// rows start..k-1 of a column whose leading entries are structurally zero;
// the returned vector covers the same rows.
std::vector<Value> forward_solve(const std::vector<Value>& chol, int k,
                                 const std::vector<Value>& b, int start) {
  std::vector<Value> x;
  x.reserve(static_cast<std::size_t>(k - start));
  for (int i = start; i < k; ++i) {
    Value acc = b[static_cast<std::size_t>(i - start)];
    for (int t = start; t < i; ++t) {
      acc = acc - chol[lower_index(i, t)] * x[static_cast<std::size_t>(t - start)];
    }
    x.push_back(acc / chol[lower_index(i, i)]);
  }
  return x;
}

// Same, with a fixed lower-triangular solver matrix.
std::vector<Value> forward_solve_const(const Eigen::MatrixXd& c,
                                       const std::vector<Value>& b, int start) {
  const int k = static_cast<int>(c.rows());
  std::vector<Value> x;
  x.reserve(static_cast<std::size_t>(k - start));
  for (int i = start; i < k; ++i) {
    Value acc = b[static_cast<std::size_t>(i - start)];
    for (int t = start; t < i; ++t) {
      acc = acc - c(i, t) * x[static_cast<std::size_t>(t - start)];
    }
    x.push_back(acc / c(i, i));
  }
  return x;
}

// tr((A A^T)^{-1} B B^T) = |A^{-1} B|_F^2 with both factors held as nodes.
Value trace_solve(const std::vector<Value>& a, const std::vector<Value>& b,
                  int k) {
  Value total;
  bool first = true;
  for (int j = 0; j < k; ++j) {
    std::vector<Value> col;
    col.reserve(static_cast<std::size_t>(k - j));
    for (int i = j; i < k; ++i) col.push_back(b[lower_index(i, j)]);
    for (const Value& xi : forward_solve(a, k, col, j)) {
      total = first ? ad::square(xi) : total + ad::square(xi);
      first = false;
    }
  }
  return total;
}

// Same with a fixed solver factor.
Value trace_solve_const(const Eigen::MatrixXd& a, const std::vector<Value>& b,
                        int k) {
  Value total;
  bool first = true;
  for (int j = 0; j < k; ++j) {
    std::vector<Value> col;
    col.reserve(static_cast<std::size_t>(k - j));
    for (int i = j; i < k; ++i) col.push_back(b[lower_index(i, j)]);
    for (const Value& xi : forward_solve_const(a, col, j)) {
      total = first ? ad::square(xi) : total + ad::square(xi);
      first = false;
    }
  }
  return total;
}

// ln Gamma_K(a) as a node; a is half a degrees-of-freedom node.
Value mv_log_gamma(const Value& a, int k) {
  Value s = ad::log_gamma(a);
  for (int j = 2; j <= k; ++j) s = s + ad::log_gamma(a + 0.5 * (1 - j));
  if (k > 1) s = s + 0.25 * k * (k - 1) * kLnPi;
  return s;
}

Value mv_digamma(const Value& a, int k) {
  Value s = ad::digamma(a);
  for (int j = 2; j <= k; ++j) s = s + ad::digamma(a + 0.5 * (1 - j));
  return s;
}

void check_k(int got, int want, const char* where) {
  if (got != want) throw std::invalid_argument(std::string(where) + ": dimension mismatch");
}

// KL[NW(omega) || NW(prior)] with a fixed prior; shared by the rkl builders.
Value kl_nw_to_prior(const NwValues& omega, const NormalWishartParams& prior) {
  validate(prior);
  const int k = omega.k;
  check_k(prior.scale.dim(), k, "kl_nw_to_prior");

  std::vector<Value> diff;
  diff.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) diff.push_back(omega.mean[i] - prior.mean(i));
  const Value mean_term =
      0.5 * prior.kappa * omega.nu * quad_form_chol(omega.chol, k, diff);

  const Value ratio = prior.kappa / omega.kappa;
  const Value kappa_term = 0.5 * k * (ratio - ad::log(ratio) - 1.0);

  const Value trace = trace_solve_const(prior.scale.cholesky(), omega.chol, k);
  const Value log_det_ratio = logdet_chol(omega.chol, k) - prior.scale.log_det();
  const Value half_nu = 0.5 * omega.nu;
  const Value wishart_term =
      0.5 * omega.nu * (trace - static_cast<double>(k)) -
      0.5 * prior.nu * log_det_ratio +
      (log_multivariate_gamma(0.5 * prior.nu, k) - mv_log_gamma(half_nu, k)) +
      0.5 * (omega.nu - prior.nu) * mv_digamma(half_nu, k);

  return mean_term + kappa_term + wishart_term;
}

}  // namespace

NwValues nw_head(const MlpConfig& cfg, const Value& raw) {
  if (cfg.head != HeadKind::kNormalWishart) {
    throw std::invalid_argument("nw_head: config head is not Normal-Wishart");
  }
  const int k = cfg.target_dim;
  const int ch = chol_len(k);
  if (raw.rows() != k + ch + 2) {
    throw std::invalid_argument("nw_head: raw rows do not match the head size");
  }
  NwValues out;
  out.k = k;
  out.mean.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) out.mean.push_back(ad::row(raw, i));
  out.chol.reserve(static_cast<std::size_t>(ch));
  int idx = k;
  for (int r = 0; r < k; ++r) {
    for (int c = 0; c <= r; ++c, ++idx) {
      const Value v = ad::row(raw, idx);
      out.chol.push_back(r == c ? ad::softplus(v) + cfg.chol_floor : v);
    }
  }
  out.kappa = ad::softplus(ad::row(raw, k + ch)) + cfg.kappa_floor;
  out.nu = ad::softplus(ad::row(raw, k + ch + 1)) + static_cast<double>(k) + 1.0 +
           cfg.nu_epsilon;
  return out;
}

GaussianValues gaussian_head(const MlpConfig& cfg, const Value& raw) {
  if (cfg.head != HeadKind::kGaussian) {
    throw std::invalid_argument("gaussian_head: config head is not Gaussian");
  }
  const int k = cfg.target_dim;
  if (raw.rows() != k + chol_len(k)) {
    throw std::invalid_argument("gaussian_head: raw rows do not match the head size");
  }
  GaussianValues out;
  out.k = k;
  for (int i = 0; i < k; ++i) out.mean.push_back(ad::row(raw, i));
  int idx = k;
  for (int r = 0; r < k; ++r) {
    for (int c = 0; c <= r; ++c, ++idx) {
      const Value v = ad::row(raw, idx);
      out.chol.push_back(r == c ? ad::softplus(v) + cfg.chol_floor : v);
    }
  }
  return out;
}

std::vector<GaussianValues> mixture_head(const MlpConfig& cfg, const Value& raw) {
  if (cfg.head != HeadKind::kMixture) {
    throw std::invalid_argument("mixture_head: config head is not a mixture");
  }
  const int k = cfg.target_dim;
  const int stride = k + chol_len(k);
  if (raw.rows() != cfg.mixture_size * stride) {
    throw std::invalid_argument("mixture_head: raw rows do not match the head size");
  }
  std::vector<GaussianValues> components;
  components.reserve(static_cast<std::size_t>(cfg.mixture_size));
  for (int m = 0; m < cfg.mixture_size; ++m) {
    const int base = m * stride;
    GaussianValues g;
    g.k = k;
    for (int i = 0; i < k; ++i) g.mean.push_back(ad::row(raw, base + i));
    int idx = base + k;
    for (int r = 0; r < k; ++r) {
      for (int c = 0; c <= r; ++c, ++idx) {
        const Value v = ad::row(raw, idx);
        g.chol.push_back(r == c ? ad::softplus(v) + cfg.chol_floor : v);
      }
    }
    components.push_back(std::move(g));
  }
  return components;
}

GaussianValues lift_gaussian(ad::Tape& tape, const Eigen::MatrixXd& mean,
                             const Eigen::MatrixXd& prec_chol) {
  const int k = static_cast<int>(mean.rows());
  if (k < 1 || mean.cols() < 1) {
    throw std::invalid_argument("lift_gaussian: empty mean block");
  }
  if (prec_chol.rows() != chol_len(k) || prec_chol.cols() != mean.cols()) {
    throw std::invalid_argument("lift_gaussian: precision block shape mismatch");
  }
  GaussianValues g;
  g.k = k;
  for (int i = 0; i < k; ++i) g.mean.push_back(tape.constant(mean.row(i)));
  for (int idx = 0; idx < chol_len(k); ++idx) {
    g.chol.push_back(tape.constant(prec_chol.row(idx)));
  }
  return g;
}

GaussianColumns pack_gaussians(const std::vector<NormalParams>& per_example) {
  if (per_example.empty()) {
    throw std::invalid_argument("pack_gaussians: empty input");
  }
  const int k = per_example.front().precision.dim();
  const auto n = static_cast<Eigen::Index>(per_example.size());
  GaussianColumns cols{Eigen::MatrixXd(k, n), Eigen::MatrixXd(chol_len(k), n)};
  for (Eigen::Index j = 0; j < n; ++j) {
    const NormalParams& p = per_example[static_cast<std::size_t>(j)];
    check_k(p.precision.dim(), k, "pack_gaussians");
    check_k(static_cast<int>(p.mean.size()), k, "pack_gaussians");
    cols.mean.col(j) = p.mean;
    const Eigen::MatrixXd c = p.precision.cholesky();
    for (int r = 0; r < k; ++r) {
      for (int cidx = 0; cidx <= r; ++cidx) {
        cols.prec_chol(lower_index(r, cidx), j) = c(r, cidx);
      }
    }
  }
  return cols;
}

Value gaussian_nll_rows(const GaussianValues& p, const Value& y) {
  const int k = p.k;
  check_k(static_cast<int>(y.rows()), k, "gaussian_nll_rows");
  std::vector<Value> diff;
  diff.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) diff.push_back(ad::row(y, i) - p.mean[i]);
  return 0.5 * quad_form_chol(p.chol, k, diff) - 0.5 * logdet_chol(p.chol, k) +
         0.5 * k * kLn2Pi;
}

Value rkl_loss_rows(const NwValues& omega, const Value& y, double beta,
                    const NormalWishartParams& prior) {
  if (beta < 0.0) throw std::domain_error("rkl_loss_rows: beta must be nonnegative");
  const Value kl = kl_nw_to_prior(omega, prior);
  if (beta == 0.0) return kl;

  const int k = omega.k;
  check_k(static_cast<int>(y.rows()), k, "rkl_loss_rows");
  std::vector<Value> diff;
  diff.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) diff.push_back(ad::row(y, i) - omega.mean[i]);
  // E_NW[-ln N(y | mu, Lambda)] under omega.
  const Value likelihood =
      0.5 * omega.nu * quad_form_chol(omega.chol, k, diff) +
      0.5 * k / omega.kappa - 0.5 * logdet_chol(omega.chol, k) -
      0.5 * mv_digamma(0.5 * omega.nu, k) + 0.5 * k * kLnPi;
  return beta * likelihood + kl;
}

Value rkl_prior_rows(const NwValues& omega, const NormalWishartParams& prior) {
  return kl_nw_to_prior(omega, prior);
}

Value kl_mvn_rows(const GaussianValues& member, const GaussianValues& student) {
  const int k = member.k;
  check_k(student.k, k, "kl_mvn_rows");
  std::vector<Value> diff;
  diff.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) diff.push_back(member.mean[i] - student.mean[i]);
  const Value quad = quad_form_chol(student.chol, k, diff);
  const Value trace = trace_solve(member.chol, student.chol, k);
  return 0.5 * (quad + logdet_chol(member.chol, k) - logdet_chol(student.chol, k) +
                trace - static_cast<double>(k));
}

Value end_loss_rows(const std::vector<GaussianValues>& members,
                    const GaussianValues& student) {
  if (members.empty()) throw std::invalid_argument("end_loss_rows: no members");
  Value s = kl_mvn_rows(members.front(), student);
  for (std::size_t m = 1; m < members.size(); ++m) {
    s = s + kl_mvn_rows(members[m], student);
  }
  return s / static_cast<double>(members.size());
}

Value md_end_loss_rows(const std::vector<GaussianValues>& members,
                       const std::vector<GaussianValues>& components) {
  if (members.empty()) throw std::invalid_argument("md_end_loss_rows: no members");
  if (members.size() != components.size()) {
    throw std::invalid_argument(
        "md_end_loss_rows: component count must match member count");
  }
  Value s = kl_mvn_rows(members.front(), components.front());
  for (std::size_t m = 1; m < members.size(); ++m) {
    s = s + kl_mvn_rows(members[m], components[m]);
  }
  return s / static_cast<double>(members.size());
}

Value endd_loss_rows(const std::vector<GaussianValues>& reduced_members,
                     const NwValues& omega, double temperature) {
  if (reduced_members.empty()) {
    throw std::invalid_argument("endd_loss_rows: no members");
  }
  if (!(temperature >= 1.0)) {
    throw std::domain_error("endd_loss_rows: temperature must be >= 1");
  }
  const int k = omega.k;

  // Tempered NW parameters and member-independent pieces.
  const Value kappa_t = temperature * omega.kappa;
  const Value nu_t = temperature * omega.nu;
  const Value log_kappa_t = ad::log(kappa_t);
  const Value logdet_scale = logdet_chol(omega.chol, k);
  const Value lmg = mv_log_gamma(0.5 * nu_t, k);

  Value neg_sum;
  for (std::size_t m = 0; m < reduced_members.size(); ++m) {
    const GaussianValues& member = reduced_members[m];
    check_k(member.k, k, "endd_loss_rows");
    const Value member_logdet = logdet_chol(member.chol, k);
    std::vector<Value> diff;
    diff.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) diff.push_back(member.mean[i] - omega.mean[i]);
    const Value gauss = 0.5 * k * log_kappa_t + 0.5 * member_logdet -
                        0.5 * k * kLn2Pi -
                        0.5 * kappa_t * quad_form_chol(member.chol, k, diff);
    const Value trace = trace_solve(omega.chol, member.chol, k);
    const Value wishart = 0.5 * (nu_t - k - 1.0) * member_logdet - 0.5 * trace -
                          0.5 * nu_t * k * kLn2 - 0.5 * nu_t * logdet_scale - lmg;
    const Value log_pdf = gauss + wishart;
    neg_sum = (m == 0) ? -log_pdf : neg_sum - log_pdf;
  }
  return neg_sum /
         (temperature * static_cast<double>(reduced_members.size()));
}

}  // namespace rpn
