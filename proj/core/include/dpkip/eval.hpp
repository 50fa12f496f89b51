#pragma once

#include <Eigen/Core>

#include "dpkip/data.hpp"
#include "dpkip/kip.hpp"

namespace dpkip {

struct EvalReport {
  double accuracy = 0.0;
  Eigen::VectorXd per_class_accuracy;
  Eigen::MatrixXi confusion;  // rows: true class, cols: predicted
  double lambda_eff = 0.0;
  Eigen::Index n_test = 0;
};

/// KRR scores k_ts^T (K_ss + lambda_eff I)^-1 Y_s, decided by argmax with
/// ties broken toward the lowest class id.
Eigen::VectorXi krr_predict(const DistilledSet& ds,
                            const Eigen::MatrixXd& X_test,
                            const KernelConfig& kernel, double lambda_base);

EvalReport evaluate(const DistilledSet& ds, const Dataset& test,
                    const KernelConfig& kernel, double lambda_base);

}  // namespace dpkip
