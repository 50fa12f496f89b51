#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dpkip/data.hpp"
#include "dpkip/errors.hpp"
#include "dpkip/privacy.hpp"
#include "dpkip/runner.hpp"

namespace {

int cmd_distill(const std::string& config_path) {
  auto config = dpkip::parse_config_file(config_path);
  if (config.multi_seed > 1) {
    auto rep = dpkip::run_multi_distill(config, config.multi_seed);
    std::printf("accuracy: %.4f +/- %.4f over %d seeds\n", rep.mean_accuracy,
                rep.std_accuracy, config.multi_seed);
    for (const auto& r : rep.runs)
      std::printf("  seed %llu: accuracy %.4f, bundle %s\n",
                  static_cast<unsigned long long>(r.meta.seed),
                  r.report.accuracy, r.bundle_dir.c_str());
  } else {
    auto r = dpkip::run_distill(config);
    std::printf("final loss: %.6g (from %.6g)\n", r.final_loss,
                r.initial_loss);
    if (r.meta.sigma > 0.0)
      std::printf("privacy: sigma %.4f over %ld steps (q=%.4g)", r.meta.sigma,
                  r.meta.steps, r.meta.q);
    else
      std::printf("privacy: none");
    if (r.meta.epsilon >= 0.0)
      std::printf(", spent epsilon %.4f at delta %.3g", r.meta.epsilon,
                  r.meta.delta);
    std::printf("\n");
    std::printf("test accuracy: %.4f (n=%ld)\n", r.report.accuracy,
                static_cast<long>(r.report.n_test));
    std::printf("bundle: %s\n", r.bundle_dir.c_str());
  }
  return 0;
}

int cmd_evaluate(const std::string& bundle_dir,
                 const std::string& config_path) {
  auto config = dpkip::parse_config_file(config_path);
  auto rep = dpkip::evaluate_bundle(bundle_dir, config);
  std::printf("accuracy: %.4f (n=%ld, lambda_eff=%.6g)\n", rep.accuracy,
              static_cast<long>(rep.n_test), rep.lambda_eff);
  for (Eigen::Index c = 0; c < rep.per_class_accuracy.size(); ++c)
    std::printf("  class %ld: %.4f\n", static_cast<long>(c),
                rep.per_class_accuracy[c]);
  return 0;
}

int cmd_account(double q, double sigma, double epsilon, double delta,
                long steps) {
  if (sigma > 0.0) {
    auto conv = dpkip::account({q, sigma, steps}, delta);
    std::printf("epsilon = %.6f (delta = %g, optimal RDP order %d)\n",
                conv.epsilon, delta, conv.order);
  } else {
    double s = dpkip::calibrate_sigma({epsilon, delta}, q, steps);
    auto conv = dpkip::account({q, s, steps}, delta);
    std::printf("sigma = %.6f (achieves epsilon %.6f <= %.6f at delta %g)\n",
                s, conv.epsilon, epsilon, delta);
  }
  return 0;
}

int cmd_export_images(const std::string& bundle_dir) {
  auto b = dpkip::load_bundle(bundle_dir);
  auto paths = dpkip::export_image_grids(b.ds, bundle_dir);
  for (const auto& p : paths) std::printf("%s\n", p.c_str());
  return 0;
}

int cmd_sweep(const std::string& config_path,
              const std::vector<double>& grid) {
  auto config = dpkip::parse_config_file(config_path);
  auto rows = dpkip::run_sweep(config, grid);
  std::printf("clip_norm,sigma,epsilon,accuracy\n");
  for (const auto& r : rows)
    std::printf("%g,%g,%g,%.4f\n", r.clip_norm, r.sigma, r.epsilon,
                r.accuracy);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DP-KIP: differentially private dataset distillation with "
               "kernel inducing points"};
  app.require_subcommand(1);

  std::string config_path, bundle_dir;
  auto* distill = app.add_subcommand("distill", "Run a distillation");
  distill->add_option("config", config_path, "JSON config file")->required();

  std::string eval_bundle, eval_config;
  auto* evaluate = app.add_subcommand("evaluate", "Score a bundle");
  evaluate->add_option("bundle", eval_bundle, "Bundle directory")->required();
  evaluate->add_option("config", eval_config, "JSON config file")->required();

  double q = 0.01, sigma = 0.0, epsilon = 0.0, delta = 1e-5;
  long steps = 1;
  auto* account = app.add_subcommand("account", "Privacy accounting query");
  account->add_option("--q", q, "Poisson sampling rate")->required();
  auto* sig_opt = account->add_option("--sigma", sigma, "Noise multiplier");
  auto* eps_opt =
      account->add_option("--epsilon", epsilon, "Target epsilon");
  sig_opt->excludes(eps_opt);
  account->add_option("--delta", delta, "Failure probability")->required();
  account->add_option("--steps", steps, "Composition steps")->required();

  auto* export_images =
      app.add_subcommand("export-images", "Write per-class image grids");
  export_images->add_option("bundle", bundle_dir, "Bundle directory")
      ->required();

  std::string sweep_config;
  std::vector<double> clip_grid;
  auto* sweep = app.add_subcommand("sweep", "Clip-norm grid sweep");
  sweep->add_option("config", sweep_config, "JSON config file")->required();
  sweep->add_option("--clip-grid", clip_grid, "Clip norms to sweep")
      ->required();

  app.add_subcommand("print-config", "Print the default config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : int(dpkip::kExitConfigError);
  }

  try {
    if (distill->parsed()) return cmd_distill(config_path);
    if (evaluate->parsed()) return cmd_evaluate(eval_bundle, eval_config);
    if (account->parsed()) {
      if (sigma <= 0.0 && epsilon <= 0.0)
        throw dpkip::ConfigError("account: provide --sigma or --epsilon");
      return cmd_account(q, sigma, epsilon, delta, steps);
    }
    if (export_images->parsed()) return cmd_export_images(bundle_dir);
    if (sweep->parsed()) return cmd_sweep(sweep_config, clip_grid);
    std::fputs(dpkip::default_config_json().c_str(), stdout);
    return 0;
  } catch (const dpkip::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return int(dpkip::kExitConfigError);
  } catch (const dpkip::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return int(dpkip::kExitDataError);
  } catch (const dpkip::NumericError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return int(dpkip::kExitNumericError);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return int(dpkip::kExitDataError);
  }
}
