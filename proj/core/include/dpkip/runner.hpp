#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpkip/data.hpp"
#include "dpkip/eval.hpp"
#include "dpkip/kip.hpp"

namespace dpkip {

struct DatasetConfig {
  std::string type;  // "idx" | "csv" | "blobs" | "raw"

  // idx / raw
  std::string train_images, train_labels;
  std::string test_images, test_labels;

  // csv
  std::string train_path, test_path;
  CsvSchema schema;

  // blobs
  long blobs_n = 0;
  long blobs_test_n = 0;
  int blobs_classes = 0;
  int blobs_dim = 0;
  double blobs_separation = 0.0;

  // raw
  long raw_n = 0, raw_test_n = 0;
  long raw_dim = 0;
  std::string raw_dtype = "float64";  // uint8 | float32 | float64
  bool raw_big_endian = false;
  SpatialShape raw_shape;
  int raw_classes = 0;
};

struct KernelSpec {
  std::string type = "fc_ntk";  // fc_ntk | scatternet | rbf
  int depth = 3;                // fc_ntk
  int scales = 2;               // scatternet J
  int orientations = 8;         // scatternet L
  double bandwidth = 1.0;       // rbf
};

struct PrivacySpec {
  enum class Mode { kNone, kEpsilonDelta, kSigma };
  Mode mode = Mode::kNone;
  double epsilon = 0.0;
  double delta = 0.0;
  double sigma = 0.0;
};

struct RunConfig {
  DatasetConfig dataset;
  KernelSpec kernel;
  int imgs_per_class = 1;
  int epochs = 1;
  int batch_size = 64;
  double learning_rate = 0.1;
  std::string optimizer = "sgd";  // sgd | adam
  double clip_norm = 1.0;
  double lambda_base = 1e-6;
  PrivacySpec privacy;
  double corrupt_fraction = 0.0;
  uint64_t seed = 0;
  std::string output_dir = "out";
  int multi_seed = 1;
};

/// Parse and validate a JSON config document; errors carry the offending
/// field path.
RunConfig parse_config_text(const std::string& json_text);
RunConfig parse_config_file(const std::string& path);

/// All defaults, serialized explicitly.
std::string default_config_json();

struct RunResult {
  BundleMeta meta;
  EvalReport report;
  DistilledSet ds;
  std::string bundle_dir;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

/// One full training run: load data, calibrate sigma when needed, run the
/// subsample/clip/noise/update loop for T = epochs * ceil(n/B) steps,
/// write the bundle, loss log, and evaluation report under output_dir.
RunResult run_distill(const RunConfig& config);

struct MultiSeedReport {
  std::vector<RunResult> runs;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
};

/// Independent runs with seeds seed, seed+1, ..., each in its own
/// subdirectory; accuracy aggregated as mean and standard deviation.
MultiSeedReport run_multi_distill(const RunConfig& config, int seeds);

struct SweepRow {
  double clip_norm = 0.0;
  double sigma = 0.0;
  double epsilon = -1.0;
  double accuracy = 0.0;
};

/// One full run per clip-norm grid point (shared seed), aggregated into
/// <output_dir>/sweep.csv.
std::vector<SweepRow> run_sweep(const RunConfig& config,
                                const std::vector<double>& clip_grid);

/// Loads the dataset's test split and scores a distilled set against it
/// with the configured kernel.
EvalReport evaluate_bundle(const std::string& bundle_dir,
                           const RunConfig& config);

}  // namespace dpkip
