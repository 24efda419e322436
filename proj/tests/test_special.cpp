#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "rpn/special.hpp"

using namespace rpn;

// Reference values computed with 40-digit arithmetic (mpmath).
TEST_CASE("log_gamma matches high-precision references") {
  CHECK(log_gamma(0.5) == doctest::Approx(0.57236494292470008707).epsilon(1e-14));
  CHECK(log_gamma(1.0) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(log_gamma(2.5) == doctest::Approx(0.28468287047291915963).epsilon(1e-14));
  CHECK(log_gamma(7.3) == doctest::Approx(7.1478925230222490328).epsilon(1e-14));
  CHECK(log_gamma(0.07) == doctest::Approx(2.6227537606032154926).epsilon(1e-14));
  CHECK(log_gamma(123.456) == doctest::Approx(469.60554712992946873).epsilon(1e-14));
}

TEST_CASE("log_gamma agrees with std::lgamma on a sweep") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.05, 50.0);
  for (int i = 0; i < 2000; ++i) {
    const double x = u(rng);
    CHECK(log_gamma(x) == doctest::Approx(std::lgamma(x)).epsilon(1e-12));
  }
}

TEST_CASE("digamma matches high-precision references") {
  CHECK(digamma(0.5) == doctest::Approx(-1.9635100260214234794).epsilon(1e-13));
  CHECK(digamma(1.0) == doctest::Approx(-0.57721566490153286061).epsilon(1e-13));
  CHECK(digamma(2.5) == doctest::Approx(0.70315664064524318723).epsilon(1e-13));
  CHECK(digamma(7.3) == doctest::Approx(1.9178203356379860984).epsilon(1e-13));
  CHECK(digamma(0.07) == doctest::Approx(-14.753326705581839345).epsilon(1e-13));
  CHECK(digamma(123.456) == doctest::Approx(4.8118293238289853873).epsilon(1e-13));
}

TEST_CASE("trigamma matches high-precision references") {
  CHECK(trigamma(0.5) == doctest::Approx(4.9348022005446793094).epsilon(1e-12));
  CHECK(trigamma(1.0) == doctest::Approx(1.6449340668482264365).epsilon(1e-12));
  CHECK(trigamma(2.5) == doctest::Approx(0.49035775610023486497).epsilon(1e-12));
  CHECK(trigamma(7.3) == doctest::Approx(0.14679576813142709816).epsilon(1e-12));
  CHECK(trigamma(0.07) == doctest::Approx(205.57287896946515109).epsilon(1e-12));
  CHECK(trigamma(123.456) == doctest::Approx(0.0081329458342781980101).epsilon(1e-12));
}

TEST_CASE("digamma/trigamma satisfy their recurrences") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.1, 30.0);
  for (int i = 0; i < 500; ++i) {
    const double x = u(rng);
    CHECK(digamma(x + 1.0) == doctest::Approx(digamma(x) + 1.0 / x).epsilon(1e-11));
    CHECK(trigamma(x + 1.0) ==
          doctest::Approx(trigamma(x) - 1.0 / (x * x)).epsilon(1e-10));
  }
}

TEST_CASE("log_multivariate_gamma matches references and K=1 reduction") {
  CHECK(log_multivariate_gamma(2.5, 1) ==
        doctest::Approx(0.28468287047291915963).epsilon(1e-14));
  CHECK(log_multivariate_gamma(2.5, 2) ==
        doctest::Approx(0.8570478133976192467).epsilon(1e-14));
  CHECK(log_multivariate_gamma(4.0, 3) ==
        doctest::Approx(5.4029750809091747963).epsilon(1e-14));
  CHECK(log_multivariate_gamma(6.7, 3) ==
        doctest::Approx(17.157795101515058).epsilon(1e-13));
  for (double a : {0.6, 1.7, 9.2}) {
    CHECK(log_multivariate_gamma(a, 1) == doctest::Approx(log_gamma(a)));
  }
}

TEST_CASE("multivariate digamma/trigamma are the offset sums") {
  CHECK(multivariate_digamma(2.5, 2) ==
        doctest::Approx(1.1259409757437103266).epsilon(1e-13));
  CHECK(multivariate_digamma(4.0, 3) ==
        doctest::Approx(3.2820586441755107993).epsilon(1e-13));
  const double a = 5.3;
  double dig = 0.0, tri = 0.0;
  for (int j = 1; j <= 3; ++j) {
    dig += digamma(a + 0.5 * (1 - j));
    tri += trigamma(a + 0.5 * (1 - j));
  }
  CHECK(multivariate_digamma(a, 3) == doctest::Approx(dig));
  CHECK(multivariate_trigamma(a, 3) == doctest::Approx(tri));
}

TEST_CASE("gamma-family domain errors") {
  CHECK_THROWS_AS(log_gamma(0.0), std::domain_error);
  CHECK_THROWS_AS(log_gamma(-1.5), std::domain_error);
  CHECK_THROWS_AS(digamma(0.0), std::domain_error);
  CHECK_THROWS_AS(trigamma(-2.0), std::domain_error);
  // Gamma_K(a) needs a > (k-1)/2.
  CHECK_THROWS_AS(log_multivariate_gamma(0.5, 2), std::domain_error);
  CHECK_THROWS_AS(log_multivariate_gamma(1.0, 3), std::domain_error);
  CHECK_THROWS_AS(multivariate_digamma(1.0, 3), std::domain_error);
  CHECK_THROWS_AS(log_multivariate_gamma(1.0, 0), std::domain_error);
}

TEST_CASE("softplus and its inverse") {
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  // Large arguments must not overflow and approach the identity.
  CHECK(softplus(500.0) == doctest::Approx(500.0).epsilon(1e-15));
  CHECK(softplus(-500.0) == doctest::Approx(0.0));
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(-30.0, 30.0);
  for (int i = 0; i < 1000; ++i) {
    const double x = u(rng);
    CHECK(softplus_inverse(softplus(x)) == doctest::Approx(x).epsilon(1e-9));
    CHECK(softplus(x) > 0.0);
  }
  for (double y : {1e-8, 0.3, 2.0, 40.0}) {
    CHECK(softplus(softplus_inverse(y)) == doctest::Approx(y).epsilon(1e-9));
  }
  CHECK_THROWS_AS(softplus_inverse(0.0), std::domain_error);
  CHECK_THROWS_AS(softplus_inverse(-1.0), std::domain_error);
}

TEST_CASE("sigmoid is the softplus derivative and is bounded") {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  for (int i = 0; i < 500; ++i) {
    const double x = u(rng);
    const double h = 1e-6;
    const double fd = (softplus(x + h) - softplus(x - h)) / (2.0 * h);
    CHECK(sigmoid(x) == doctest::Approx(fd).epsilon(1e-6));
    CHECK(sigmoid(x) > 0.0);
    CHECK(sigmoid(x) < 1.0);
  }
  CHECK(sigmoid(0.0) == doctest::Approx(0.5).epsilon(1e-15));
}
