#include "rpn/special.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace rpn {
namespace {

constexpr double kLnSqrt2Pi = 0.91893853320467274178032973640562;  // ln sqrt(2 pi)
constexpr double kLnPi = 1.1447298858494001741434273513531;

// The asymptotic series are evaluated only for arguments >= kShift; smaller
// arguments are moved up with the Gamma/psi recurrences first.  At x = 10 the
// first neglected Bernoulli term is ~2e-18 for all three series.
constexpr double kShift = 10.0;

void require_positive(double a, const char* fn) {
  if (!(a > 0.0)) {
    throw std::domain_error(std::string(fn) + ": argument must be positive, got " +
                            std::to_string(a));
  }
}

}  // namespace

double log_gamma(double a) {
  require_positive(a, "log_gamma");
  // Shift into the asymptotic regime: ln G(a) = ln G(a+n) - sum ln(a+i).
  double shift_log = 0.0;
  double x = a;
  while (x < kShift) {
    shift_log += std::log(x);
    x += 1.0;
  }
  // Stirling series with Bernoulli-number corrections B_2k / (2k(2k-1) x^(2k-1)).
  const double r = 1.0 / x;
  const double r2 = r * r;
  const double series =
      r * (1.0 / 12.0 +
           r2 * (-1.0 / 360.0 +
                 r2 * (1.0 / 1260.0 +
                       r2 * (-1.0 / 1680.0 +
                             r2 * (1.0 / 1188.0 +
                                   r2 * (-691.0 / 360360.0 +
                                         r2 * (7.0 / 1092.0 +
                                               r2 * (-3617.0 / 122400.0))))))));
  return (x - 0.5) * std::log(x) - x + kLnSqrt2Pi + series - shift_log;
}

double digamma(double a) {
  require_positive(a, "digamma");
  // psi(x) = psi(x+1) - 1/x pushes the argument into the asymptotic regime.
  double shift = 0.0;
  double x = a;
  while (x < kShift) {
    shift += 1.0 / x;
    x += 1.0;
  }
  // psi(x) ~ ln x - 1/(2x) - sum B_2k / (2k x^(2k)).
  const double r2 = 1.0 / (x * x);
  const double series =
      r2 * (1.0 / 12.0 +
            r2 * (-1.0 / 120.0 +
                  r2 * (1.0 / 252.0 +
                        r2 * (-1.0 / 240.0 +
                              r2 * (1.0 / 132.0 +
                                    r2 * (-691.0 / 32760.0 +
                                          r2 * (1.0 / 12.0)))))));
  return std::log(x) - 0.5 / x - series - shift;
}

double trigamma(double a) {
  require_positive(a, "trigamma");
  // psi'(x) = psi'(x+1) + 1/x^2.
  double shift = 0.0;
  double x = a;
  while (x < kShift) {
    shift += 1.0 / (x * x);
    x += 1.0;
  }
  // psi'(x) ~ 1/x + 1/(2x^2) + sum B_2k / x^(2k+1).
  const double r = 1.0 / x;
  const double r2 = r * r;
  const double series =
      r * r2 * (1.0 / 6.0 +
                r2 * (-1.0 / 30.0 +
                      r2 * (1.0 / 42.0 +
                            r2 * (-1.0 / 30.0 +
                                  r2 * (5.0 / 66.0 +
                                        r2 * (-691.0 / 2730.0 +
                                              r2 * (7.0 / 6.0)))))));
  return r + 0.5 * r2 + series + shift;
}

namespace {

void require_mv_domain(double a, int k, const char* fn) {
  if (k < 1) {
    throw std::domain_error(std::string(fn) + ": dimension must be >= 1, got " +
                            std::to_string(k));
  }
  if (!(a > 0.5 * (k - 1))) {
    throw std::domain_error(std::string(fn) + ": argument must exceed (k-1)/2 = " +
                            std::to_string(0.5 * (k - 1)) + ", got " +
                            std::to_string(a));
  }
}

}  // namespace

double log_multivariate_gamma(double a, int k) {
  require_mv_domain(a, k, "log_multivariate_gamma");
  double sum = 0.25 * k * (k - 1) * kLnPi;
  for (int j = 1; j <= k; ++j) {
    sum += log_gamma(a + 0.5 * (1 - j));
  }
  return sum;
}

double multivariate_digamma(double a, int k) {
  require_mv_domain(a, k, "multivariate_digamma");
  double sum = 0.0;
  for (int j = 1; j <= k; ++j) {
    sum += digamma(a + 0.5 * (1 - j));
  }
  return sum;
}

double multivariate_trigamma(double a, int k) {
  require_mv_domain(a, k, "multivariate_trigamma");
  double sum = 0.0;
  for (int j = 1; j <= k; ++j) {
    sum += trigamma(a + 0.5 * (1 - j));
  }
  return sum;
}

double softplus(double x) {
  // Branches keep the result exact for large |x| without overflow.
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_inverse(double y) {
  if (!(y > 0.0)) {
    throw std::domain_error("softplus_inverse: argument must be positive");
  }
  if (y > 30.0) return y;
  return std::log(std::expm1(y));
}

}  // namespace rpn
