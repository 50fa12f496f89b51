#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "dpkip/kernels.hpp"

namespace dpkip {

/// Spatial shape of a flattened feature vector; channels == 0 marks
/// non-image (flat) data.
struct SpatialShape {
  int channels = 0;
  int height = 0;
  int width = 0;
  bool is_image() const { return channels > 0; }
};

/// The learnable support set. Labels are fixed one-hot targets; masked
/// coordinates are frozen at their initial values for the whole run.
struct DistilledSet {
  Eigen::MatrixXd X_s;  // m x D, learnable
  Eigen::MatrixXd Y_s;  // m x num_classes, one-hot, fixed
  std::optional<Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>> pixel_mask;
  SpatialShape shape;
  int num_classes = 0;

  Eigen::Index size() const { return X_s.rows(); }
  Eigen::Index dim() const { return X_s.cols(); }
};

struct TargetBatch {
  Eigen::MatrixXd X_t;  // B x D
  Eigen::MatrixXd Y_t;  // B x num_classes
  std::vector<Eigen::Index> indices;
};

struct LossReport {
  double loss = 0.0;
  Eigen::VectorXd residual_norms;  // per batch sample
  double lambda_eff = 0.0;
};

/// Support points drawn i.i.d. standard normal; labels assigned in
/// balanced blocks of `imgs_per_class`. With corrupt_fraction > 0, that
/// fraction of coordinates per point is frozen at fresh noise values
/// (selected data-independently) and recorded in pixel_mask.
DistilledSet init_distilled(int m, int D, int num_classes, int imgs_per_class,
                            uint64_t seed, double corrupt_fraction = 0.0,
                            SpatialShape shape = {});

/// (lambda_base / m) * trace(K_ss); a constant of the current step, never
/// differentiated through.
double effective_lambda(const GramMatrix& K_ss, double lambda_base, int m);

LossReport krr_loss(const DistilledSet& ds, const TargetBatch& batch,
                    const KernelConfig& kernel, double lambda_base);

/// Row l = gradient of the l-th squared residual with respect to X_s,
/// flattened support-point-major; masked coordinates zeroed. lambda_eff
/// is held constant.
Eigen::MatrixXd per_sample_gradients(const DistilledSet& ds,
                                     const TargetBatch& batch,
                                     const KernelConfig& kernel,
                                     double lambda_base);

/// Loss and per-sample gradients from one factorization; used by the
/// training loop to avoid solving twice per step.
struct StepGradients {
  LossReport report;
  Eigen::MatrixXd per_sample;  // B x (m*D)
};
StepGradients loss_and_gradients(const DistilledSet& ds,
                                 const TargetBatch& batch,
                                 const KernelConfig& kernel,
                                 double lambda_base);

}  // namespace dpkip
