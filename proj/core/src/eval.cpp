#include "dpkip/eval.hpp"

#include <Eigen/Cholesky>

#include <string>

#include "dpkip/errors.hpp"

namespace dpkip {

Eigen::VectorXi krr_predict(const DistilledSet& ds,
                            const Eigen::MatrixXd& X_test,
                            const KernelConfig& kernel, double lambda_base) {
  if (X_test.cols() != ds.dim())
    throw DataError("test/support dimension mismatch");
  const int m = static_cast<int>(ds.size());

  GramMatrix K_ss = kernel_matrix(ds.X_s, ds.X_s, kernel);
  const double lambda_eff = effective_lambda(K_ss, lambda_base, m);
  Eigen::MatrixXd reg = K_ss.entries;
  reg.diagonal().array() += lambda_eff;
  Eigen::LLT<Eigen::MatrixXd> llt(reg);
  if (llt.info() != Eigen::Success)
    throw NumericError(
        "kernel system not positive definite (effective lambda = " +
        std::to_string(lambda_eff) + ")");

  Eigen::MatrixXd alpha = llt.solve(ds.Y_s);
  Eigen::MatrixXd K_ts = kernel_matrix(X_test, ds.X_s, kernel).entries;
  Eigen::MatrixXd scores = K_ts * alpha;

  Eigen::VectorXi pred(scores.rows());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    int best = 0;
    for (int c = 1; c < ds.num_classes; ++c)
      if (scores(i, c) > scores(i, best)) best = c;  // strict: ties -> lowest
    pred[i] = best;
  }
  return pred;
}

EvalReport evaluate(const DistilledSet& ds, const Dataset& test,
                    const KernelConfig& kernel, double lambda_base) {
  if (test.num_classes != ds.num_classes)
    throw DataError("test set class count differs from distilled set");
  Eigen::VectorXi pred = krr_predict(ds, test.features, kernel, lambda_base);

  EvalReport rep;
  rep.n_test = test.size();
  rep.confusion = Eigen::MatrixXi::Zero(ds.num_classes, ds.num_classes);
  for (Eigen::Index i = 0; i < rep.n_test; ++i)
    rep.confusion(test.labels[i], pred[i]) += 1;
  rep.accuracy =
      rep.confusion.diagonal().sum() / static_cast<double>(rep.n_test);
  rep.per_class_accuracy.resize(ds.num_classes);
  for (int c = 0; c < ds.num_classes; ++c) {
    long total = rep.confusion.row(c).sum();
    rep.per_class_accuracy[c] =
        total > 0 ? rep.confusion(c, c) / static_cast<double>(total) : 0.0;
  }

  GramMatrix K_ss = kernel_matrix(ds.X_s, ds.X_s, kernel);
  rep.lambda_eff =
      effective_lambda(K_ss, lambda_base, static_cast<int>(ds.size()));
  return rep;
}

}  // namespace dpkip
