#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "dpkip/errors.hpp"
#include "dpkip/privacy.hpp"

using namespace dpkip;

namespace {

// Numerical-integration oracle: for integer alpha,
//   E_{z~N(0,sigma^2)} [ ((1-q) + q e^{(2z-1)/(2 sigma^2)})^alpha ]
// is the exact Renyi divergence integrand for the subsampled Gaussian
// (remove-one direction); the library's binomial expression must upper
// bound (1/(alpha-1)) log of it.
double integration_oracle(int alpha, double q, double sigma) {
  const int N = 400000;
  const double lo = -30.0 * sigma, hi = 31.0 * sigma;
  const double dz = (hi - lo) / N;
  double acc = 0.0;
  for (int i = 0; i < N; ++i) {
    double z = lo + (i + 0.5) * dz;
    double ratio = (1.0 - q) + q * std::exp((2.0 * z - 1.0) / (2 * sigma * sigma));
    double pdf = std::exp(-z * z / (2 * sigma * sigma)) /
                 (sigma * std::sqrt(2.0 * M_PI));
    acc += std::pow(ratio, alpha) * pdf * dz;
  }
  return std::log(acc) / (alpha - 1.0);
}

}  // namespace

TEST_CASE("gaussian RDP is alpha / (2 sigma^2)") {
  CHECK(gaussian_rdp(2, 1.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(gaussian_rdp(10, 2.0) == doctest::Approx(10.0 / 8.0).epsilon(1e-15));
  CHECK_THROWS_AS(gaussian_rdp(1, 1.0), ConfigError);
  CHECK_THROWS_AS(gaussian_rdp(2, 0.0), ConfigError);
}

TEST_CASE("subsampled bound collapses to the Gaussian at q = 1") {
  for (int alpha : {2, 5, 32})
    CHECK(subsampled_gaussian_rdp(alpha, 1.0, 1.3) ==
          doctest::Approx(gaussian_rdp(alpha, 1.3)).epsilon(1e-12));
}

TEST_CASE("alpha=2 closed form: log(1 + q^2 (e^{1/sigma^2} - 1))") {
  // At alpha=2 the binomial sum telescopes to an exact closed form,
  // giving an independent oracle.
  for (double q : {0.01, 0.1, 0.5}) {
    for (double sigma : {0.8, 1.0, 2.0}) {
      double expect =
          std::log1p(q * q * (std::exp(1.0 / (sigma * sigma)) - 1.0));
      CHECK(subsampled_gaussian_rdp(2, q, sigma) ==
            doctest::Approx(expect).epsilon(1e-10));
    }
  }
  // The spot value frozen during design review.
  CHECK(subsampled_gaussian_rdp(2, 0.01, 1.0) ==
        doctest::Approx(1.7181e-4).epsilon(1e-3));
}

TEST_CASE("binomial bound dominates the numerical-integration oracle") {
  for (int alpha : {2, 3, 5, 8}) {
    for (double q : {0.05, 0.2}) {
      for (double sigma : {1.0, 2.0}) {
        double bound = subsampled_gaussian_rdp(alpha, q, sigma);
        double oracle = integration_oracle(alpha, q, sigma);
        CHECK(bound >= oracle - 1e-9);
        // and it should not be wildly loose at these scales
        CHECK(bound <= oracle + 1.0);
      }
    }
  }
}

TEST_CASE("composition is linear in steps") {
  auto curve = subsampled_gaussian_curve(0.1, 1.5, 16);
  auto c10 = compose(curve, 10);
  for (size_t i = 0; i < curve.eps.size(); ++i)
    CHECK(c10.eps[i] == doctest::Approx(10.0 * curve.eps[i]).epsilon(1e-15));
}

TEST_CASE("rdp_to_dp reproduces the non-subsampled grid value 5.3026") {
  auto conv = account({1.0, 1.0, 1}, 1e-5);
  CHECK(conv.epsilon == doctest::Approx(5.302585).epsilon(1e-6));
  CHECK(conv.order == 6);
  // Independent grid evaluation of alpha/2 + ln(1e5)/(alpha-1).
  double best = 1e300;
  for (int a = 2; a <= 256; ++a)
    best = std::min(best, a / 2.0 + std::log(1e5) / (a - 1.0));
  CHECK(conv.epsilon == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("calibrate_sigma round trip and safety direction") {
  for (double target_eps : {0.5, 2.0, 10.0}) {
    double sigma = calibrate_sigma({target_eps, 1e-5}, 0.02, 500);
    double achieved = account({0.02, sigma, 500}, 1e-5).epsilon;
    CHECK(achieved <= target_eps);              // never overspends
    CHECK(achieved == doctest::Approx(target_eps).epsilon(1e-3));
  }
}

TEST_CASE("monotonicity fuzz: epsilon falls with sigma, rises with q and T") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> uq(0.005, 0.5), us(0.5, 4.0);
  std::uniform_int_distribution<long> ut(1, 2000);
  for (int trial = 0; trial < 40; ++trial) {
    double q = uq(rng), sigma = us(rng);
    long T = ut(rng);
    double base = account({q, sigma, T}, 1e-5).epsilon;
    CHECK(account({q, sigma * 1.3, T}, 1e-5).epsilon <= base + 1e-12);
    CHECK(account({std::min(1.0, q * 1.5), sigma, T}, 1e-5).epsilon >=
          base - 1e-12);
    CHECK(account({q, sigma, T * 2}, 1e-5).epsilon >= base - 1e-12);
  }
}

TEST_CASE("RDP values are nonnegative and grow with alpha") {
  auto curve = subsampled_gaussian_curve(0.03, 1.2, 64);
  double prev = 0.0;
  for (double e : curve.eps) {
    CHECK(e >= 0.0);
    CHECK(e >= prev - 1e-12);
    prev = e;
  }
}

TEST_CASE("feature map SNR is 1 / (2 sigma)") {
  CHECK(feature_map_snr(0.5) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(feature_map_snr(2.0) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK_THROWS_AS(feature_map_snr(0.0), ConfigError);
}

TEST_CASE("parameter validation") {
  CHECK_THROWS_AS(subsampled_gaussian_rdp(2, 0.0, 1.0), ConfigError);
  CHECK_THROWS_AS(subsampled_gaussian_rdp(2, 1.1, 1.0), ConfigError);
  CHECK_THROWS_AS(account({0.1, 1.0, 0}, 1e-5), ConfigError);
  CHECK_THROWS_AS(account({0.1, 1.0, 10}, 0.0), ConfigError);
  CHECK_THROWS_AS(calibrate_sigma({0.0, 1e-5}, 0.1, 10), ConfigError);
}
