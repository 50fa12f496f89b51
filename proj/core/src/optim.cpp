#include "dpkip/optim.hpp"

#include <cmath>

#include "dpkip/errors.hpp"

namespace dpkip {

OptimizerState make_sgd(double lr) { return SgdOptimizer{lr}; }

OptimizerState make_adam(double lr, int rows, int cols, double beta1,
                         double beta2, double eps) {
  AdamOptimizer a;
  a.learning_rate = lr;
  a.beta1 = beta1;
  a.beta2 = beta2;
  a.eps = eps;
  a.m1 = Eigen::MatrixXd::Zero(rows, cols);
  a.m2 = Eigen::MatrixXd::Zero(rows, cols);
  return a;
}

std::vector<Eigen::Index> poisson_sample(Eigen::Index n, double q,
                                         std::mt19937_64& rng) {
  if (n < 1) throw ConfigError("poisson_sample: n must be >= 1");
  if (!(q > 0.0 && q <= 1.0))
    throw ConfigError("poisson_sample: q must be in (0, 1]");
  std::vector<Eigen::Index> idx;
  if (q == 1.0) {
    idx.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) idx[i] = i;
    return idx;
  }
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i)
    if (unif(rng) < q) idx.push_back(i);
  return idx;
}

Eigen::MatrixXd clip_rows(const Eigen::MatrixXd& G, double clip_norm) {
  if (!(clip_norm > 0.0)) throw ConfigError("clip norm must be > 0");
  Eigen::MatrixXd out = G;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    double nrm = out.row(r).norm();
    if (nrm > clip_norm) out.row(r) *= clip_norm / nrm;
  }
  return out;
}

Eigen::VectorXd noisy_sum(const Eigen::MatrixXd& G_clipped, double sigma,
                          double clip_norm, std::mt19937_64& rng) {
  if (sigma < 0.0) throw ConfigError("sigma must be >= 0");
  Eigen::VectorXd sum = G_clipped.rows() > 0
                            ? Eigen::VectorXd(G_clipped.colwise().sum())
                            : Eigen::VectorXd::Zero(G_clipped.cols());
  if (sigma > 0.0) {
    std::normal_distribution<double> normal(0.0, sigma * clip_norm);
    for (Eigen::Index i = 0; i < sum.size(); ++i) sum[i] += normal(rng);
  }
  return sum;
}

void apply_update(OptimizerState& state, DistilledSet& ds,
                  const Eigen::VectorXd& g_tilde, int batch_nominal) {
  const int m = static_cast<int>(ds.size());
  const int D = static_cast<int>(ds.dim());
  if (g_tilde.size() != static_cast<Eigen::Index>(m) * D)
    throw DataError("apply_update: gradient length mismatch");
  if (batch_nominal < 1) throw ConfigError("nominal batch size must be >= 1");

  Eigen::MatrixXd grad(m, D);
  for (int i = 0; i < m; ++i)
    grad.row(i) =
        g_tilde.segment(static_cast<Eigen::Index>(i) * D, D).transpose();
  grad /= static_cast<double>(batch_nominal);

  Eigen::MatrixXd delta;
  if (auto* sgd = std::get_if<SgdOptimizer>(&state)) {
    delta = sgd->learning_rate * grad;
  } else {
    auto& adam = std::get<AdamOptimizer>(state);
    if (adam.m1.rows() != m || adam.m1.cols() != D)
      throw ConfigError("Adam moment buffers do not match X_s shape");
    adam.step += 1;
    adam.m1 = adam.beta1 * adam.m1 + (1.0 - adam.beta1) * grad;
    adam.m2 =
        adam.beta2 * adam.m2 + (1.0 - adam.beta2) * grad.cwiseProduct(grad);
    double c1 = 1.0 - std::pow(adam.beta1, static_cast<double>(adam.step));
    double c2 = 1.0 - std::pow(adam.beta2, static_cast<double>(adam.step));
    Eigen::MatrixXd mhat = adam.m1 / c1;
    Eigen::MatrixXd vhat = adam.m2 / c2;
    delta = adam.learning_rate *
            mhat.cwiseQuotient(vhat.cwiseSqrt().array().matrix() +
                               Eigen::MatrixXd::Constant(m, D, adam.eps));
  }

  if (ds.pixel_mask) {
    for (int i = 0; i < m; ++i)
      for (int d = 0; d < D; ++d)
        if ((*ds.pixel_mask)(i, d)) delta(i, d) = 0.0;
  }
  ds.X_s -= delta;
}

}  // namespace dpkip
