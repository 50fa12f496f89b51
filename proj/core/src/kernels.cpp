#include "dpkip/kernels.hpp"

#include <cmath>
#include <numbers>

#include "dpkip/errors.hpp"

namespace dpkip {

namespace {

constexpr double kDomainTol = 1e-9;
constexpr double kGradClamp = 1.0 - 1e-7;
// Sigma^0(x,x) below this is treated as a degenerate (effectively zero)
// input.
constexpr double kDegenerateFloor = 1e-45;

double clamp_unit(double u, const char* who) {
  if (std::abs(u) > 1.0 + kDomainTol)
    throw NumericError(std::string(who) + ": |u| = " + std::to_string(std::abs(u)) +
                       " outside [-1, 1]");
  return std::clamp(u, -1.0, 1.0);
}

// d kappa0 / du, with u clamped away from +-1.
double kappa0_deriv(double u) {
  u = std::clamp(u, -kGradClamp, kGradClamp);
  return 1.0 / (std::numbers::pi * std::sqrt(1.0 - u * u));
}

}  // namespace

double kappa0(double u) {
  u = clamp_unit(u, "kappa0");
  return (std::numbers::pi - std::acos(u)) / std::numbers::pi;
}

double kappa1(double u) {
  u = clamp_unit(u, "kappa1");
  return (u * (std::numbers::pi - std::acos(u)) + std::sqrt(1.0 - u * u)) /
         std::numbers::pi;
}

double fc_ntk(const Eigen::VectorXd& x, const Eigen::VectorXd& x2, int depth) {
  if (depth < 1) throw ConfigError("fc_ntk depth must be >= 1");
  if (x.size() != x2.size())
    throw DataError("fc_ntk: dimension mismatch");
  const double D = static_cast<double>(x.size());
  const double pxx = x.squaredNorm() / D;
  const double pyy = x2.squaredNorm() / D;
  if (pxx <= kDegenerateFloor || pyy <= kDegenerateFloor)
    throw NumericError("fc_ntk: degenerate (near-zero) input");
  // Sigma^h(x,x) is invariant across layers (kappa1(1) = 1), so the norm
  // product is a constant of the recursion.
  const double nrm = std::sqrt(pxx * pyy);
  double sigma = x.dot(x2) / D;
  double theta = sigma;
  for (int h = 1; h <= depth; ++h) {
    const double u = sigma / nrm;
    sigma = nrm * kappa1(u);
    theta = sigma + theta * kappa0(u);
  }
  return theta;
}

Eigen::VectorXd fc_ntk_grad(const Eigen::VectorXd& x, const Eigen::VectorXd& x2,
                            int depth) {
  if (depth < 1) throw ConfigError("fc_ntk depth must be >= 1");
  if (x.size() != x2.size())
    throw DataError("fc_ntk_grad: dimension mismatch");
  const double D = static_cast<double>(x.size());
  const double pxx = x.squaredNorm() / D;
  const double pyy = x2.squaredNorm() / D;
  if (pxx <= kDegenerateFloor || pyy <= kDegenerateFloor)
    throw NumericError("fc_ntk_grad: degenerate (near-zero) input");
  const double nrm = std::sqrt(pxx * pyy);

  // Every intermediate derivative is a*x + b*x2; propagate coefficient
  // pairs instead of vectors.
  struct Lin {
    double a = 0, b = 0;
  };
  const Lin dnrm{pyy / (D * nrm), 0.0};  // d nrm / dx

  double sigma = x.dot(x2) / D;
  double theta = sigma;
  Lin dsigma{0.0, 1.0 / D};
  Lin dtheta = dsigma;

  for (int h = 1; h <= depth; ++h) {
    const double u = sigma / nrm;
    Lin du{(dsigma.a - u * dnrm.a) / nrm, (dsigma.b - u * dnrm.b) / nrm};

    const double k1 = kappa1(u);
    const double k0 = kappa0(u);  // also d kappa1 / du
    const double k0d = kappa0_deriv(u);

    Lin dsigma_next{k1 * dnrm.a + nrm * k0 * du.a,
                    k1 * dnrm.b + nrm * k0 * du.b};
    const double sigma_next = nrm * k1;

    Lin dtheta_next{dsigma_next.a + k0 * dtheta.a + theta * k0d * du.a,
                    dsigma_next.b + k0 * dtheta.b + theta * k0d * du.b};
    theta = sigma_next + theta * k0;
    sigma = sigma_next;
    dsigma = dsigma_next;
    dtheta = dtheta_next;
  }
  return dtheta.a * x + dtheta.b * x2;
}

double rbf(const Eigen::VectorXd& x, const Eigen::VectorXd& x2,
           double bandwidth) {
  if (bandwidth <= 0.0) throw ConfigError("rbf bandwidth must be > 0");
  return std::exp(-(x - x2).squaredNorm() / (2.0 * bandwidth * bandwidth));
}

Eigen::VectorXd rbf_grad(const Eigen::VectorXd& x, const Eigen::VectorXd& x2,
                         double bandwidth) {
  const double k = rbf(x, x2, bandwidth);
  return (-k / (bandwidth * bandwidth)) * (x - x2);
}

double kernel_value(const Eigen::VectorXd& x, const Eigen::VectorXd& x2,
                    const KernelConfig& config) {
  return std::visit(
      [&](const auto& k) -> double {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, FcNtkKernel>) {
          return fc_ntk(x, x2, k.depth);
        } else if constexpr (std::is_same_v<T, RbfKernel>) {
          return rbf(x, x2, k.bandwidth);
        } else {
          return scatter_forward(x, k.channels, *k.bank)
              .dot(scatter_forward(x2, k.channels, *k.bank));
        }
      },
      config);
}

Eigen::VectorXd kernel_grad1(const Eigen::VectorXd& x, const Eigen::VectorXd& z,
                             const KernelConfig& config) {
  return std::visit(
      [&](const auto& k) -> Eigen::VectorXd {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, FcNtkKernel>) {
          return fc_ntk_grad(x, z, k.depth);
        } else if constexpr (std::is_same_v<T, RbfKernel>) {
          return rbf_grad(x, z, k.bandwidth);
        } else {
          return scatter_vjp(x, k.channels, *k.bank,
                             scatter_forward(z, k.channels, *k.bank));
        }
      },
      config);
}

Eigen::MatrixXd scatter_features(const Eigen::MatrixXd& X,
                                 const FilterBank& bank, int channels) {
  Eigen::MatrixXd feats(X.rows(), bank.feature_length(channels));
  Eigen::VectorXd row;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    row = X.row(i);
    feats.row(i) = scatter_forward(row, channels, bank);
  }
  return feats;
}

GramMatrix kernel_matrix(const Eigen::MatrixXd& X, const Eigen::MatrixXd& X2,
                         const KernelConfig& config) {
  if (X.cols() != X2.cols())
    throw DataError("kernel_matrix: column count mismatch (" +
                    std::to_string(X.cols()) + " vs " +
                    std::to_string(X2.cols()) + ")");
  GramMatrix g;
  g.symmetric = (&X == &X2) || (X.rows() == X2.rows() && X == X2);

  if (const auto* sk = std::get_if<ScatterKernel>(&config)) {
    Eigen::MatrixXd f1 = scatter_features(X, *sk->bank, sk->channels);
    if (g.symmetric) {
      g.entries = f1 * f1.transpose();
      g.entries = 0.5 * (g.entries + g.entries.transpose()).eval();
    } else {
      Eigen::MatrixXd f2 = scatter_features(X2, *sk->bank, sk->channels);
      g.entries = f1 * f2.transpose();
    }
    return g;
  }

  g.entries.resize(X.rows(), X2.rows());
  Eigen::VectorXd xi, xj;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    xi = X.row(i);
    Eigen::Index j0 = g.symmetric ? i : 0;
    for (Eigen::Index j = j0; j < X2.rows(); ++j) {
      xj = X2.row(j);
      g.entries(i, j) = kernel_value(xi, xj, config);
      if (g.symmetric && j != i) g.entries(j, i) = g.entries(i, j);
    }
  }
  return g;
}

std::pair<double, Eigen::VectorXd> feature_kernel_and_vjp(
    const Eigen::VectorXd& x, const Eigen::VectorXd& x2_features,
    const FilterBank& bank, int channels, double cotangent) {
  ScatterVjpOp op(bank, x, channels);
  if (x2_features.size() != op.features().size())
    throw DataError("feature_kernel_and_vjp: feature length mismatch");
  double value = op.features().dot(x2_features);
  if (cotangent == 0.0)
    return {value, Eigen::VectorXd::Zero(x.size())};
  return {value, op.apply(cotangent * x2_features)};
}

}  // namespace dpkip
