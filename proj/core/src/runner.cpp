#include "dpkip/runner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>

#include <json.hpp>

#include "dpkip/errors.hpp"
#include "dpkip/optim.hpp"
#include "dpkip/privacy.hpp"
#include "dpkip/scatternet.hpp"

namespace dpkip {

namespace {

using nlohmann::json;

const json& require(const json& j, const std::string& key,
                    const std::string& path) {
  if (!j.contains(key))
    throw ConfigError("missing config field: " + path + "." + key);
  return j.at(key);
}

template <typename T>
T get_or(const json& j, const std::string& key, T def,
         const std::string& path) {
  if (!j.contains(key)) return def;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for config field: " + path + "." + key);
  }
}

DatasetConfig parse_dataset(const json& j) {
  DatasetConfig d;
  d.type = require(j, "type", "dataset").get<std::string>();
  if (d.type == "idx") {
    d.train_images = require(j, "train_images", "dataset").get<std::string>();
    d.train_labels = require(j, "train_labels", "dataset").get<std::string>();
    d.test_images = require(j, "test_images", "dataset").get<std::string>();
    d.test_labels = require(j, "test_labels", "dataset").get<std::string>();
  } else if (d.type == "csv") {
    d.train_path = require(j, "train_path", "dataset").get<std::string>();
    d.test_path = require(j, "test_path", "dataset").get<std::string>();
    d.schema.label_column =
        require(j, "label_column", "dataset").get<std::string>();
    for (const auto& c : require(j, "columns", "dataset")) {
      ColumnSpec spec;
      spec.name = require(c, "name", "dataset.columns").get<std::string>();
      spec.categorical = get_or(c, "categorical", false, "dataset.columns");
      d.schema.columns.push_back(spec);
    }
  } else if (d.type == "blobs") {
    d.blobs_n = require(j, "n", "dataset").get<long>();
    d.blobs_test_n = get_or<long>(j, "test_n", 1000, "dataset");
    d.blobs_classes = require(j, "num_classes", "dataset").get<int>();
    d.blobs_dim = require(j, "dim", "dataset").get<int>();
    d.blobs_separation = require(j, "separation", "dataset").get<double>();
  } else if (d.type == "raw") {
    d.train_images = require(j, "train_features", "dataset").get<std::string>();
    d.train_labels = require(j, "train_labels", "dataset").get<std::string>();
    d.test_images = require(j, "test_features", "dataset").get<std::string>();
    d.test_labels = require(j, "test_labels", "dataset").get<std::string>();
    d.raw_n = require(j, "n", "dataset").get<long>();
    d.raw_test_n = require(j, "test_n", "dataset").get<long>();
    d.raw_dim = require(j, "dim", "dataset").get<long>();
    d.raw_dtype = get_or<std::string>(j, "dtype", "float64", "dataset");
    d.raw_big_endian = get_or(j, "big_endian", false, "dataset");
    d.raw_classes = require(j, "num_classes", "dataset").get<int>();
    if (j.contains("shape")) {
      const auto& s = j.at("shape");
      d.raw_shape = {s[0].get<int>(), s[1].get<int>(), s[2].get<int>()};
    }
  } else {
    throw ConfigError("dataset.type must be idx, csv, blobs, or raw; got '" +
                      d.type + "'");
  }
  return d;
}

PrivacySpec parse_privacy(const json& j) {
  PrivacySpec p;
  if (j.is_string() && j.get<std::string>() == "none") {
    p.mode = PrivacySpec::Mode::kNone;
    return p;
  }
  if (!j.is_object()) throw ConfigError("privacy: expected object or \"none\"");
  const bool has_eps = j.contains("epsilon");
  const bool has_sigma = j.contains("sigma");
  const bool none = get_or(j, "none", false, "privacy");
  if (int(has_eps) + int(has_sigma) + int(none) != 1)
    throw ConfigError(
        "privacy: exactly one of {epsilon+delta, sigma, none} required");
  if (none) {
    p.mode = PrivacySpec::Mode::kNone;
  } else if (has_eps) {
    p.mode = PrivacySpec::Mode::kEpsilonDelta;
    p.epsilon = j.at("epsilon").get<double>();
    p.delta = require(j, "delta", "privacy").get<double>();
    if (!(p.epsilon > 0.0)) throw ConfigError("privacy.epsilon must be > 0");
    if (!(p.delta > 0.0 && p.delta < 1.0))
      throw ConfigError("privacy.delta must be in (0, 1)");
  } else {
    p.mode = PrivacySpec::Mode::kSigma;
    p.sigma = j.at("sigma").get<double>();
    p.delta = get_or(j, "delta", 0.0, "privacy");  // optional, for reporting
    if (!(p.sigma > 0.0)) throw ConfigError("privacy.sigma must be > 0");
  }
  return p;
}

RunConfig parse_config(const json& j) {
  RunConfig c;
  c.dataset = parse_dataset(require(j, "dataset", "<root>"));

  const json& kj = require(j, "kernel", "<root>");
  c.kernel.type = require(kj, "type", "kernel").get<std::string>();
  if (c.kernel.type == "fc_ntk") {
    c.kernel.depth = get_or(kj, "depth", 3, "kernel");
    if (c.kernel.depth < 1) throw ConfigError("kernel.depth must be >= 1");
  } else if (c.kernel.type == "scatternet") {
    c.kernel.scales = get_or(kj, "scales", 2, "kernel");
    c.kernel.orientations = get_or(kj, "orientations", 8, "kernel");
  } else if (c.kernel.type == "rbf") {
    c.kernel.bandwidth = get_or(kj, "bandwidth", 1.0, "kernel");
    if (!(c.kernel.bandwidth > 0.0))
      throw ConfigError("kernel.bandwidth must be > 0");
  } else {
    throw ConfigError("kernel.type must be fc_ntk, scatternet, or rbf");
  }

  c.imgs_per_class = get_or(j, "imgs_per_class", 1, "<root>");
  c.epochs = get_or(j, "epochs", 1, "<root>");
  c.batch_size = get_or(j, "batch_size", 64, "<root>");
  c.learning_rate = get_or(j, "learning_rate", 0.1, "<root>");
  c.optimizer = get_or<std::string>(j, "optimizer", "sgd", "<root>");
  c.clip_norm = get_or(j, "clip_norm", 1.0, "<root>");
  c.lambda_base = get_or(j, "lambda_base", 1e-6, "<root>");
  c.privacy = parse_privacy(require(j, "privacy", "<root>"));
  c.corrupt_fraction = get_or(j, "corrupt_fraction", 0.0, "<root>");
  c.seed = get_or<uint64_t>(j, "seed", 0, "<root>");
  c.output_dir = get_or<std::string>(j, "output_dir", "out", "<root>");
  if (j.contains("eval"))
    c.multi_seed = get_or(j.at("eval"), "multi_seed", 1, "eval");

  if (c.imgs_per_class < 1) throw ConfigError("imgs_per_class must be >= 1");
  if (c.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(c.learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (c.optimizer != "sgd" && c.optimizer != "adam")
    throw ConfigError("optimizer must be sgd or adam");
  if (!(c.clip_norm > 0.0)) throw ConfigError("clip_norm must be > 0");
  if (c.lambda_base < 0.0) throw ConfigError("lambda_base must be >= 0");
  if (!(c.corrupt_fraction >= 0.0 && c.corrupt_fraction < 1.0))
    throw ConfigError("corrupt_fraction must be in [0, 1)");
  if (c.multi_seed < 1) throw ConfigError("eval.multi_seed must be >= 1");
  return c;
}

Dataset load_split(const DatasetConfig& d, bool test, uint64_t seed) {
  if (d.type == "idx")
    return load_idx(test ? d.test_images : d.train_images,
                    test ? d.test_labels : d.train_labels);
  if (d.type == "csv") {
    CsvSchema schema = d.schema;
    if (!test) return load_csv(d.train_path, schema);
    Dataset train = load_csv(d.train_path, schema);
    return load_csv(d.test_path, schema, *train.preprocess);
  }
  if (d.type == "blobs")
    return synth_blobs(test ? d.blobs_test_n : d.blobs_n, d.blobs_classes,
                       d.blobs_dim, d.blobs_separation,
                       test ? seed ^ 0x7e57da7aULL : seed);
  // raw
  RawDtype dt = d.raw_dtype == "uint8"     ? RawDtype::kUint8
                : d.raw_dtype == "float32" ? RawDtype::kFloat32
                                           : RawDtype::kFloat64;
  return load_raw_tensor(test ? d.test_images : d.train_images,
                         test ? d.test_labels : d.train_labels,
                         test ? d.raw_test_n : d.raw_n, d.raw_dim, dt,
                         d.raw_big_endian, d.raw_shape, d.raw_classes);
}

std::string kernel_name(const KernelSpec& k) {
  std::ostringstream ss;
  if (k.type == "fc_ntk")
    ss << "fc_ntk(depth=" << k.depth << ")";
  else if (k.type == "scatternet")
    ss << "scatternet(J=" << k.scales << ",L=" << k.orientations << ")";
  else
    ss << "rbf(bandwidth=" << k.bandwidth << ")";
  return ss.str();
}

KernelConfig build_kernel(const KernelSpec& spec, const Dataset& train) {
  if (spec.type == "fc_ntk") return FcNtkKernel{spec.depth};
  if (spec.type == "rbf") return RbfKernel{spec.bandwidth};
  if (!train.shape.is_image())
    throw ConfigError("scatternet kernel requires image-shaped data");
  auto bank = std::make_shared<FilterBank>(
      build_filter_bank(train.shape.height, train.shape.width, spec.scales,
                        spec.orientations));
  return ScatterKernel{std::move(bank), train.shape.channels};
}

void write_text(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp);
    out << text;
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw DataError("cannot rename " + tmp + " -> " + path);
}

json report_json(const EvalReport& rep) {
  json j;
  j["accuracy"] = rep.accuracy;
  j["n_test"] = rep.n_test;
  j["lambda_eff"] = rep.lambda_eff;
  j["per_class_accuracy"] = std::vector<double>(
      rep.per_class_accuracy.data(),
      rep.per_class_accuracy.data() + rep.per_class_accuracy.size());
  std::vector<std::vector<int>> conf(rep.confusion.rows());
  for (Eigen::Index r = 0; r < rep.confusion.rows(); ++r)
    for (Eigen::Index c = 0; c < rep.confusion.cols(); ++c)
      conf[r].push_back(rep.confusion(r, c));
  j["confusion"] = conf;
  return j;
}

TargetBatch make_batch(const Dataset& train,
                       const std::vector<Eigen::Index>& idx) {
  TargetBatch b;
  b.indices = idx;
  b.X_t.resize(idx.size(), train.dim());
  Eigen::VectorXi labels(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) {
    b.X_t.row(i) = train.features.row(idx[i]);
    labels[static_cast<Eigen::Index>(i)] = train.labels[idx[i]];
  }
  b.Y_t = one_hot(labels, train.num_classes);
  return b;
}

}  // namespace

RunConfig parse_config_text(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string default_config_json() {
  json j;
  j["dataset"] = {{"type", "blobs"}, {"n", 4000},       {"test_n", 1000},
                  {"num_classes", 4}, {"dim", 20},       {"separation", 6.0}};
  j["kernel"] = {{"type", "fc_ntk"}, {"depth", 3},
                 {"scales", 2},      {"orientations", 8},
                 {"bandwidth", 1.0}};
  j["imgs_per_class"] = 1;
  j["epochs"] = 1;
  j["batch_size"] = 64;
  j["learning_rate"] = 0.1;
  j["optimizer"] = "sgd";
  j["clip_norm"] = 1.0;
  j["lambda_base"] = 1e-6;
  j["privacy"] = "none";
  j["corrupt_fraction"] = 0.0;
  j["seed"] = 0;
  j["output_dir"] = "out";
  j["eval"] = {{"multi_seed", 1}};
  return j.dump(2) + "\n";
}

RunResult run_distill(const RunConfig& config) {
  Dataset train = load_split(config.dataset, /*test=*/false, config.seed);
  Dataset test = load_split(config.dataset, /*test=*/true, config.seed);

  const long n = train.size();
  if (config.batch_size > n)
    throw ConfigError("batch_size exceeds dataset size");
  const int B = config.batch_size;
  const double q = static_cast<double>(B) / n;
  const long steps_per_epoch = (n + B - 1) / B;
  const long T = static_cast<long>(config.epochs) * steps_per_epoch;

  KernelConfig kernel = build_kernel(config.kernel, train);
  const int k = train.num_classes;
  const int m = k * config.imgs_per_class;
  const int D = static_cast<int>(train.dim());
  if (train.shape.is_image() &&
      static_cast<long>(train.shape.channels) * train.shape.height *
              train.shape.width != D)
    throw DataError("spatial shape inconsistent with feature dimension");

  DistilledSet ds =
      init_distilled(m, D, k, config.imgs_per_class, config.seed,
                     config.corrupt_fraction, train.shape);

  const bool private_mode = config.privacy.mode != PrivacySpec::Mode::kNone;
  double sigma = 0.0;
  if (config.privacy.mode == PrivacySpec::Mode::kEpsilonDelta)
    sigma = calibrate_sigma({config.privacy.epsilon, config.privacy.delta}, q,
                            T);
  else if (config.privacy.mode == PrivacySpec::Mode::kSigma)
    sigma = config.privacy.sigma;

  OptimizerState opt = config.optimizer == "adam"
                           ? make_adam(config.learning_rate, m, D)
                           : make_sgd(config.learning_rate);

  // Loop randomness is decoupled from the init stream so identical seeds
  // replay identically regardless of corrupt_fraction history.
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

  // Fixed probe batch for comparable start/end losses.
  std::vector<Eigen::Index> probe_idx(std::min<long>(n, 256));
  for (size_t i = 0; i < probe_idx.size(); ++i)
    probe_idx[i] = static_cast<Eigen::Index>(i);
  TargetBatch probe = make_batch(train, probe_idx);

  RunResult out;
  out.initial_loss = krr_loss(ds, probe, kernel, config.lambda_base).loss;

  std::ostringstream log;
  log << "iteration,loss,grad_norm_median\n";
  for (long t = 0; t < T; ++t) {
    auto idx = poisson_sample(n, q, rng);
    double loss = std::numeric_limits<double>::quiet_NaN();
    double med = 0.0;
    Eigen::VectorXd g_sum = Eigen::VectorXd::Zero(
        static_cast<Eigen::Index>(m) * D);
    bool have_grad = !idx.empty();
    if (have_grad) {
      TargetBatch batch = make_batch(train, idx);
      StepGradients sg =
          loss_and_gradients(ds, batch, kernel, config.lambda_base);
      loss = sg.report.loss;
      std::vector<double> norms(sg.per_sample.rows());
      for (Eigen::Index r = 0; r < sg.per_sample.rows(); ++r)
        norms[r] = sg.per_sample.row(r).norm();
      std::nth_element(norms.begin(), norms.begin() + norms.size() / 2,
                       norms.end());
      med = norms[norms.size() / 2];
      if (private_mode) {
        Eigen::MatrixXd clipped = clip_rows(sg.per_sample, config.clip_norm);
        g_sum = noisy_sum(clipped, sigma, config.clip_norm, rng);
      } else {
        g_sum = sg.per_sample.colwise().sum();
      }
    } else if (private_mode) {
      // Empty Poisson batch: the mechanism still releases pure noise.
      g_sum = noisy_sum(Eigen::MatrixXd::Zero(0, g_sum.size()), sigma,
                        config.clip_norm, rng);
    }
    if (have_grad || private_mode)
      apply_update(opt, ds, g_sum,
                   private_mode ? B : std::max<int>(int(idx.size()), 1));
    log << t << "," << loss << "," << med << "\n";
  }
  out.final_loss = krr_loss(ds, probe, kernel, config.lambda_base).loss;

  out.meta.kernel = kernel_name(config.kernel);
  out.meta.sigma = sigma;
  out.meta.steps = T;
  out.meta.q = q;
  out.meta.clip_norm = private_mode ? config.clip_norm : 0.0;
  out.meta.lambda_base = config.lambda_base;
  out.meta.seed = config.seed;
  out.meta.final_loss = out.final_loss;
  const double report_delta = config.privacy.delta;
  if (private_mode && report_delta > 0.0) {
    out.meta.epsilon = account({q, sigma, T}, report_delta).epsilon;
    out.meta.delta = report_delta;
  }

  out.bundle_dir = config.output_dir + "/bundle";
  export_bundle(ds, out.meta, out.bundle_dir);
  write_text(config.output_dir + "/loss_log.csv", log.str());

  out.report = evaluate(ds, test, kernel, config.lambda_base);
  write_text(config.output_dir + "/report.json",
             report_json(out.report).dump(2) + "\n");
  out.ds = std::move(ds);
  return out;
}

MultiSeedReport run_multi_distill(const RunConfig& config, int seeds) {
  if (seeds < 1) throw ConfigError("seed count must be >= 1");
  MultiSeedReport rep;
  for (int s = 0; s < seeds; ++s) {
    RunConfig c = config;
    c.seed = config.seed + static_cast<uint64_t>(s);
    c.output_dir = config.output_dir + "/seed_" + std::to_string(c.seed);
    rep.runs.push_back(run_distill(c));
  }
  double sum = 0.0;
  for (const auto& r : rep.runs) sum += r.report.accuracy;
  rep.mean_accuracy = sum / seeds;
  double ss = 0.0;
  for (const auto& r : rep.runs) {
    double d = r.report.accuracy - rep.mean_accuracy;
    ss += d * d;
  }
  rep.std_accuracy = seeds > 1 ? std::sqrt(ss / (seeds - 1)) : 0.0;
  return rep;
}

std::vector<SweepRow> run_sweep(const RunConfig& config,
                                const std::vector<double>& clip_grid) {
  if (clip_grid.empty()) throw ConfigError("clip grid must be nonempty");
  std::vector<SweepRow> rows;
  std::ostringstream csv;
  csv << "clip_norm,sigma,epsilon,accuracy\n";
  for (double C : clip_grid) {
    RunConfig c = config;
    c.clip_norm = C;
    std::ostringstream name;
    name << config.output_dir << "/clip_" << C;
    c.output_dir = name.str();
    RunResult r = run_distill(c);
    SweepRow row{C, r.meta.sigma, r.meta.epsilon, r.report.accuracy};
    rows.push_back(row);
    csv << C << "," << row.sigma << "," << row.epsilon << "," << row.accuracy
        << "\n";
  }
  write_text(config.output_dir + "/sweep.csv", csv.str());
  return rows;
}

EvalReport evaluate_bundle(const std::string& bundle_dir,
                           const RunConfig& config) {
  LoadedBundle b = load_bundle(bundle_dir);
  Dataset test = load_split(config.dataset, /*test=*/true, config.seed);
  Dataset shape_src = test;
  KernelConfig kernel = build_kernel(config.kernel, shape_src);
  return evaluate(b.ds, test, kernel, config.lambda_base);
}

}  // namespace dpkip
