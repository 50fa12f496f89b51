#include "dpkip/kip.hpp"

#include <Eigen/Cholesky>

#include <random>
#include <string>

#include "dpkip/errors.hpp"

namespace dpkip {

DistilledSet init_distilled(int m, int D, int num_classes, int imgs_per_class,
                            uint64_t seed, double corrupt_fraction,
                            SpatialShape shape) {
  if (m < 1 || D < 1 || num_classes < 1)
    throw ConfigError("init_distilled: m, D, num_classes must be positive");
  if (m != imgs_per_class * num_classes)
    throw ConfigError("init_distilled: m = " + std::to_string(m) +
                      " != imgs_per_class * num_classes = " +
                      std::to_string(imgs_per_class * num_classes));
  if (!(corrupt_fraction >= 0.0 && corrupt_fraction < 1.0))
    throw ConfigError("corrupt_fraction must be in [0, 1)");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  DistilledSet ds;
  ds.num_classes = num_classes;
  ds.shape = shape;
  ds.X_s.resize(m, D);
  for (int i = 0; i < m; ++i)
    for (int d = 0; d < D; ++d) ds.X_s(i, d) = normal(rng);

  ds.Y_s = Eigen::MatrixXd::Zero(m, num_classes);
  for (int i = 0; i < m; ++i) ds.Y_s(i, i / imgs_per_class) = 1.0;

  const int n_frozen = static_cast<int>(corrupt_fraction * D);
  if (n_frozen > 0) {
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> mask(m, D);
    mask.setConstant(false);
    std::vector<int> coords(D);
    for (int d = 0; d < D; ++d) coords[d] = d;
    for (int i = 0; i < m; ++i) {
      // Data-independent selection: shuffle and take the first n_frozen.
      std::shuffle(coords.begin(), coords.end(), rng);
      for (int k = 0; k < n_frozen; ++k) {
        mask(i, coords[k]) = true;
        ds.X_s(i, coords[k]) = normal(rng);
      }
    }
    ds.pixel_mask = std::move(mask);
  }
  return ds;
}

double effective_lambda(const GramMatrix& K_ss, double lambda_base, int m) {
  if (K_ss.entries.rows() != K_ss.entries.cols() || K_ss.entries.rows() != m)
    throw DataError("effective_lambda: K_ss must be m x m");
  if (lambda_base < 0.0) throw ConfigError("lambda_base must be >= 0");
  return lambda_base / m * K_ss.entries.trace();
}

namespace {

struct Factored {
  GramMatrix K_ss;
  Eigen::MatrixXd K_ts;  // B x m
  double lambda_eff = 0.0;
  Eigen::LLT<Eigen::MatrixXd> llt;
  Eigen::MatrixXd alpha;      // m x C
  Eigen::MatrixXd residuals;  // B x C
  // Scatter-kernel path keeps per-support linearizations and features.
  std::vector<ScatterVjpOp> ops;
  Eigen::MatrixXd phi_s;  // m x F
  Eigen::MatrixXd phi_t;  // B x F
};

void check_shapes(const DistilledSet& ds, const TargetBatch& batch) {
  if (ds.size() < 1) throw DataError("empty distilled set");
  if (batch.X_t.rows() < 1) throw DataError("empty target batch");
  if (batch.X_t.cols() != ds.dim())
    throw DataError("target/support dimension mismatch");
  if (batch.Y_t.cols() != ds.num_classes ||
      batch.Y_t.rows() != batch.X_t.rows())
    throw DataError("target label shape mismatch");
}

Factored factorize(const DistilledSet& ds, const TargetBatch& batch,
                   const KernelConfig& kernel, double lambda_base,
                   bool keep_ops) {
  check_shapes(ds, batch);
  const int m = static_cast<int>(ds.size());

  Factored f;
  if (const auto* sk = std::get_if<ScatterKernel>(&kernel)) {
    if (keep_ops) {
      f.phi_s.resize(m, sk->bank->feature_length(sk->channels));
      f.ops.reserve(m);
      Eigen::VectorXd row;
      for (int i = 0; i < m; ++i) {
        row = ds.X_s.row(i);
        f.ops.emplace_back(*sk->bank, row, sk->channels);
        f.phi_s.row(i) = f.ops.back().features();
      }
    } else {
      f.phi_s = scatter_features(ds.X_s, *sk->bank, sk->channels);
    }
    f.phi_t = scatter_features(batch.X_t, *sk->bank, sk->channels);
    f.K_ss.entries = f.phi_s * f.phi_s.transpose();
    f.K_ss.entries = 0.5 * (f.K_ss.entries + f.K_ss.entries.transpose()).eval();
    f.K_ss.symmetric = true;
    f.K_ts = f.phi_t * f.phi_s.transpose();
  } else {
    f.K_ss = kernel_matrix(ds.X_s, ds.X_s, kernel);
    f.K_ts = kernel_matrix(batch.X_t, ds.X_s, kernel).entries;
  }

  f.lambda_eff = effective_lambda(f.K_ss, lambda_base, m);
  Eigen::MatrixXd reg = f.K_ss.entries;
  reg.diagonal().array() += f.lambda_eff;
  f.llt.compute(reg);
  if (f.llt.info() != Eigen::Success)
    throw NumericError(
        "kernel system not positive definite (effective lambda = " +
        std::to_string(f.lambda_eff) + ")");
  f.alpha = f.llt.solve(ds.Y_s);
  f.residuals = batch.Y_t - f.K_ts * f.alpha;
  return f;
}

LossReport report_from(const Factored& f) {
  LossReport rep;
  rep.lambda_eff = f.lambda_eff;
  rep.residual_norms = f.residuals.rowwise().norm();
  rep.loss = f.residuals.squaredNorm();
  return rep;
}

Eigen::MatrixXd gradients_from(Factored& f, const DistilledSet& ds,
                               const TargetBatch& batch,
                               const KernelConfig& kernel) {
  const int m = static_cast<int>(ds.size());
  const int D = static_cast<int>(ds.dim());
  const int B = static_cast<int>(batch.X_t.rows());

  // W(:,l) = (K_ss + lambda I)^-1 k_l ; rho(:,l) = alpha r_l.
  Eigen::MatrixXd W = f.llt.solve(f.K_ts.transpose());        // m x B
  Eigen::MatrixXd rho = f.alpha * f.residuals.transpose();    // m x B

  Eigen::MatrixXd G(B, static_cast<Eigen::Index>(m) * D);

  if (std::holds_alternative<ScatterKernel>(kernel)) {
    // Feature-space cotangents: for sample l and support i,
    //   c_{l,i} = -2 rho(i,l) phi(x_t_l)
    //             + 2 W(i,l) Phi_s^T rho(:,l) + 2 rho(i,l) Phi_s^T W(:,l).
    Eigen::MatrixXd U = f.phi_s.transpose() * rho;  // F x B
    Eigen::MatrixXd V = f.phi_s.transpose() * W;    // F x B
    Eigen::MatrixXd cots(B, f.phi_s.cols());
    for (int i = 0; i < m; ++i) {
      for (int l = 0; l < B; ++l)
        cots.row(l) = -2.0 * rho(i, l) * f.phi_t.row(l) +
                      2.0 * W(i, l) * U.col(l).transpose() +
                      2.0 * rho(i, l) * V.col(l).transpose();
      G.middleCols(static_cast<Eigen::Index>(i) * D, D) =
          f.ops[i].apply_rows(cots);
    }
  } else {
    Eigen::VectorXd xi, z;
    Eigen::MatrixXd Gt(D, B), Gs(D, m), coef(m, B);
    for (int i = 0; i < m; ++i) {
      xi = ds.X_s.row(i);
      for (int l = 0; l < B; ++l) {
        z = batch.X_t.row(l);
        Gt.col(l) = kernel_grad1(xi, z, kernel);
      }
      for (int j = 0; j < m; ++j) {
        z = ds.X_s.row(j);
        Gs.col(j) = kernel_grad1(xi, z, kernel);
      }
      for (int j = 0; j < m; ++j)
        for (int l = 0; l < B; ++l)
          coef(j, l) = W(i, l) * rho(j, l) + W(j, l) * rho(i, l);
      G.middleCols(static_cast<Eigen::Index>(i) * D, D) =
          (Gt * (-2.0 * rho.row(i).asDiagonal()) + 2.0 * Gs * coef)
              .transpose();
    }
  }

  if (ds.pixel_mask) {
    for (int i = 0; i < m; ++i)
      for (int d = 0; d < D; ++d)
        if ((*ds.pixel_mask)(i, d))
          G.col(static_cast<Eigen::Index>(i) * D + d).setZero();
  }
  return G;
}

}  // namespace

LossReport krr_loss(const DistilledSet& ds, const TargetBatch& batch,
                    const KernelConfig& kernel, double lambda_base) {
  auto f = factorize(ds, batch, kernel, lambda_base, /*keep_ops=*/false);
  return report_from(f);
}

Eigen::MatrixXd per_sample_gradients(const DistilledSet& ds,
                                     const TargetBatch& batch,
                                     const KernelConfig& kernel,
                                     double lambda_base) {
  auto f = factorize(ds, batch, kernel, lambda_base, /*keep_ops=*/true);
  return gradients_from(f, ds, batch, kernel);
}

StepGradients loss_and_gradients(const DistilledSet& ds,
                                 const TargetBatch& batch,
                                 const KernelConfig& kernel,
                                 double lambda_base) {
  auto f = factorize(ds, batch, kernel, lambda_base, /*keep_ops=*/true);
  StepGradients out;
  out.report = report_from(f);
  out.per_sample = gradients_from(f, ds, batch, kernel);
  return out;
}

}  // namespace dpkip
