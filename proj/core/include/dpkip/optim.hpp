#pragma once

#include <cstdint>
#include <random>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "dpkip/kip.hpp"

namespace dpkip {

struct ClipConfig {
  double clip_norm = 1.0;  // C > 0
};

struct SgdOptimizer {
  double learning_rate = 0.1;
};

struct AdamOptimizer {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Eigen::MatrixXd m1;  // first moment, X_s shaped
  Eigen::MatrixXd m2;  // second moment
  long step = 0;
};

using OptimizerState = std::variant<SgdOptimizer, AdamOptimizer>;

OptimizerState make_sgd(double lr);
OptimizerState make_adam(double lr, int rows, int cols, double beta1 = 0.9,
                         double beta2 = 0.999, double eps = 1e-8);

/// Poisson subsampling: each of the n indices included independently with
/// probability q. The result may be empty.
std::vector<Eigen::Index> poisson_sample(Eigen::Index n, double q,
                                         std::mt19937_64& rng);

/// Row-wise L2 clipping: g / max(1, ||g||/C). Rows already within the
/// bound pass through unchanged.
Eigen::MatrixXd clip_rows(const Eigen::MatrixXd& G, double clip_norm);

/// Column sum of the clipped rows plus N(0, (sigma C)^2 I).
Eigen::VectorXd noisy_sum(const Eigen::MatrixXd& G_clipped, double sigma,
                          double clip_norm, std::mt19937_64& rng);

/// One parameter update from the privatized gradient sum. The effective
/// gradient is g_tilde / batch_nominal; masked coordinates stay frozen.
/// This is the only mutation path into X_s, and it sees clipped-and-
/// noised sums only.
void apply_update(OptimizerState& state, DistilledSet& ds,
                  const Eigen::VectorXd& g_tilde, int batch_nominal);

}  // namespace dpkip
