#pragma once

#include <memory>
#include <utility>
#include <variant>

#include <Eigen/Core>

#include "dpkip/scatternet.hpp"

namespace dpkip {

/// Closed-form infinite-width fully-connected ReLU NTK.
struct FcNtkKernel {
  int depth = 3;
};

/// k(x,x') = exp(-||x-x'||^2 / (2 h^2)). Cheap, independently checkable;
/// used by the optimizer/DP test suites.
struct RbfKernel {
  double bandwidth = 1.0;
};

/// k(x,x') = <phi_S(x), phi_S(x')> with phi_S the scattering feature map.
struct ScatterKernel {
  std::shared_ptr<const FilterBank> bank;
  int channels = 1;
};

using KernelConfig = std::variant<FcNtkKernel, ScatterKernel, RbfKernel>;

struct GramMatrix {
  Eigen::MatrixXd entries;
  bool symmetric = false;
};

// Arc-cosine kernel pieces for the ReLU NTK recursion.
// kappa0(u) = (pi - acos u) / pi, kappa1(u) = (u (pi - acos u) + sqrt(1-u^2)) / pi.
// |u| may exceed 1 by at most 1e-9 (clamped); beyond that a NumericError
// is thrown.
double kappa0(double u);
double kappa1(double u);

/// Depth-`depth` NTK value. Layer 0: Sigma = Theta = x.x'/D; at each
/// layer u = Sigma/sqrt(Sigma_xx Sigma_x'x'), Sigma' = nrm*kappa1(u),
/// Theta' = Sigma' + Theta*kappa0(u).
double fc_ntk(const Eigen::VectorXd& x, const Eigen::VectorXd& x2, int depth);

/// d fc_ntk(x, x2) / dx. The kappa0 derivative diverges at u = +-1, so u
/// is clamped to [-1+1e-7, 1-1e-7] inside derivative terms only.
Eigen::VectorXd fc_ntk_grad(const Eigen::VectorXd& x, const Eigen::VectorXd& x2,
                            int depth);

double rbf(const Eigen::VectorXd& x, const Eigen::VectorXd& x2,
           double bandwidth);
Eigen::VectorXd rbf_grad(const Eigen::VectorXd& x, const Eigen::VectorXd& x2,
                         double bandwidth);

/// Kernel value for any variant; rows are flattened points/images.
double kernel_value(const Eigen::VectorXd& x, const Eigen::VectorXd& x2,
                    const KernelConfig& config);

/// Gradient of k(x, z) with respect to x, for the vector kernels
/// (FcNtk, Rbf). Scatter gradients go through ScatterVjpOp.
Eigen::VectorXd kernel_grad1(const Eigen::VectorXd& x, const Eigen::VectorXd& z,
                             const KernelConfig& config);

/// Entry (i,j) = k(X.row(i), X2.row(j)). Symmetric flag is set when the
/// two operands are the same matrix (by address) or bitwise equal shapes
/// are detected by the caller passing X twice.
GramMatrix kernel_matrix(const Eigen::MatrixXd& X, const Eigen::MatrixXd& X2,
                         const KernelConfig& config);

/// Scattering features for every row of X (each row a flattened image).
Eigen::MatrixXd scatter_features(const Eigen::MatrixXd& X,
                                 const FilterBank& bank, int channels);

/// Returns <phi_S(x), x2_features> and cotangent * d<phi_S(x), x2_features>/dx.
std::pair<double, Eigen::VectorXd> feature_kernel_and_vjp(
    const Eigen::VectorXd& x, const Eigen::VectorXd& x2_features,
    const FilterBank& bank, int channels, double cotangent);

}  // namespace dpkip
