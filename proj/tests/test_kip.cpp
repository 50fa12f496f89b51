#include <doctest.h>

#include <cmath>
#include <memory>
#include <random>

#include "dpkip/errors.hpp"
#include "dpkip/kip.hpp"

using namespace dpkip;

namespace {

DistilledSet random_set(int m, int D, int k, uint64_t seed) {
  return init_distilled(m, D, k, m / k, seed);
}

TargetBatch random_batch(int B, int D, int k, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<int> cls(0, k - 1);
  TargetBatch b;
  b.X_t.resize(B, D);
  b.Y_t = Eigen::MatrixXd::Zero(B, k);
  for (int i = 0; i < B; ++i) {
    for (int d = 0; d < D; ++d) b.X_t(i, d) = normal(rng);
    b.Y_t(i, cls(rng)) = 1.0;
  }
  return b;
}

// loss of batch sample l via the public loss report.
double loss_of(const DistilledSet& ds, const TargetBatch& batch,
               const KernelConfig& kernel, double lambda_base, int l) {
  auto rep = krr_loss(ds, batch, kernel, lambda_base);
  return rep.residual_norms[l] * rep.residual_norms[l];
}

}  // namespace

TEST_CASE("init_distilled: balanced one-hot labels, reproducible") {
  auto ds = init_distilled(6, 4, 3, 2, 42);
  CHECK(ds.size() == 6);
  CHECK(ds.dim() == 4);
  CHECK(!ds.pixel_mask.has_value());
  for (int i = 0; i < 6; ++i) {
    CHECK(ds.Y_s.row(i).sum() == 1.0);
    CHECK(ds.Y_s(i, i / 2) == 1.0);
  }
  auto ds2 = init_distilled(6, 4, 3, 2, 42);
  CHECK((ds.X_s - ds2.X_s).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(init_distilled(5, 4, 3, 2, 0), ConfigError);
}

TEST_CASE("init_distilled corruption masks the stated fraction per point") {
  auto ds = init_distilled(4, 100, 2, 2, 7, 0.05);
  REQUIRE(ds.pixel_mask.has_value());
  for (int i = 0; i < 4; ++i) {
    int frozen = 0;
    for (int d = 0; d < 100; ++d) frozen += (*ds.pixel_mask)(i, d);
    CHECK(frozen == 5);
  }
}

TEST_CASE("effective lambda is (lambda_base/m) tr K_ss") {
  GramMatrix K;
  K.entries = Eigen::MatrixXd::Identity(4, 4) * 2.5;
  CHECK(effective_lambda(K, 0.1, 4) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("krr_loss worked example: m=1, k=1, lambda_eff=1 gives 0.25") {
  // Single support point equal to the single target, kernel value 1 at
  // zero distance, lambda_base 1 so lambda_eff = 1. Prediction is
  // 1/(1+1) = 0.5 and the squared residual is 0.25.
  DistilledSet ds;
  ds.num_classes = 1;
  ds.X_s = Eigen::MatrixXd::Zero(1, 3);
  ds.Y_s = Eigen::MatrixXd::Ones(1, 1);
  TargetBatch batch;
  batch.X_t = Eigen::MatrixXd::Zero(1, 3);
  batch.Y_t = Eigen::MatrixXd::Ones(1, 1);

  auto rep = krr_loss(ds, batch, RbfKernel{1.0}, 1.0);
  CHECK(rep.lambda_eff == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(rep.loss == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("loss equals the sum of squared residual norms") {
  std::mt19937_64 rng(31);
  auto ds = random_set(4, 6, 2, 5);
  auto batch = random_batch(7, 6, 2, rng);
  auto rep = krr_loss(ds, batch, FcNtkKernel{2}, 1e-3);
  CHECK(rep.loss ==
        doctest::Approx(rep.residual_norms.squaredNorm()).epsilon(1e-12));
}

TEST_CASE("per-sample gradients match directional finite differences") {
  std::mt19937_64 rng(37);
  const double h = 1e-5;
  for (KernelConfig kernel :
       {KernelConfig(FcNtkKernel{2}), KernelConfig(RbfKernel{1.2})}) {
    for (int trial = 0; trial < 5; ++trial) {
      auto ds = random_set(4, 5, 2, 100 + trial);
      auto batch = random_batch(3, 5, 2, rng);
      Eigen::MatrixXd G = per_sample_gradients(ds, batch, kernel, 1e-3);
      REQUIRE(G.rows() == 3);
      REQUIRE(G.cols() == 20);

      std::normal_distribution<double> normal;
      Eigen::MatrixXd V(4, 5);
      for (int i = 0; i < 4; ++i)
        for (int d = 0; d < 5; ++d) V(i, d) = normal(rng);
      V /= V.norm();

      for (int l = 0; l < 3; ++l) {
        DistilledSet p = ds, q = ds;
        p.X_s += h * V;
        q.X_s -= h * V;
        double fd = (loss_of(p, batch, kernel, 1e-3, l) -
                     loss_of(q, batch, kernel, 1e-3, l)) /
                    (2 * h);
        double lhs = 0.0;
        for (int i = 0; i < 4; ++i)
          lhs += G.row(l).segment(i * 5, 5).dot(V.row(i));
        CHECK(lhs == doctest::Approx(fd).epsilon(1e-5));
      }
    }
  }
}

TEST_CASE("scatter-kernel per-sample gradients match finite differences") {
  auto bank = std::make_shared<FilterBank>(build_filter_bank(8, 8, 2, 8));
  KernelConfig kernel = ScatterKernel{bank, 1};
  std::mt19937_64 rng(41);
  const double h = 1e-5;
  const int D = 64;

  DistilledSet ds = init_distilled(2, D, 2, 1, 9, 0.0, {1, 8, 8});
  auto batch = random_batch(2, D, 2, rng);
  Eigen::MatrixXd G = per_sample_gradients(ds, batch, kernel, 1e-3);

  std::normal_distribution<double> normal;
  Eigen::MatrixXd V(2, D);
  for (int i = 0; i < 2; ++i)
    for (int d = 0; d < D; ++d) V(i, d) = normal(rng);
  V /= V.norm();

  for (int l = 0; l < 2; ++l) {
    DistilledSet p = ds, q = ds;
    p.X_s += h * V;
    q.X_s -= h * V;
    double fd = (loss_of(p, batch, kernel, 1e-3, l) -
                 loss_of(q, batch, kernel, 1e-3, l)) /
                (2 * h);
    double lhs = 0.0;
    for (int i = 0; i < 2; ++i)
      lhs += G.row(l).segment(i * D, D).dot(V.row(i));
    CHECK(lhs == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("masked coordinates receive zero gradient") {
  std::mt19937_64 rng(43);
  auto ds = init_distilled(4, 40, 2, 2, 11, 0.1);
  REQUIRE(ds.pixel_mask.has_value());
  auto batch = random_batch(3, 40, 2, rng);
  Eigen::MatrixXd G = per_sample_gradients(ds, batch, RbfKernel{1.0}, 1e-3);
  for (int i = 0; i < 4; ++i)
    for (int d = 0; d < 40; ++d)
      if ((*ds.pixel_mask)(i, d))
        CHECK(G.col(i * 40 + d).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("loss_and_gradients agrees with the separate entry points") {
  std::mt19937_64 rng(47);
  auto ds = random_set(4, 6, 2, 13);
  auto batch = random_batch(5, 6, 2, rng);
  auto both = loss_and_gradients(ds, batch, FcNtkKernel{3}, 1e-4);
  auto rep = krr_loss(ds, batch, FcNtkKernel{3}, 1e-4);
  auto G = per_sample_gradients(ds, batch, FcNtkKernel{3}, 1e-4);
  CHECK(both.report.loss == doctest::Approx(rep.loss).epsilon(1e-14));
  CHECK((both.per_sample - G).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("shape mismatches are rejected") {
  auto ds = random_set(2, 4, 2, 1);
  TargetBatch bad;
  bad.X_t = Eigen::MatrixXd::Zero(2, 5);
  bad.Y_t = Eigen::MatrixXd::Zero(2, 2);
  CHECK_THROWS_AS(krr_loss(ds, bad, RbfKernel{1.0}, 1e-3), DataError);
}
