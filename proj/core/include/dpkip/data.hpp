#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dpkip/kip.hpp"

namespace dpkip {

/// Fitted per-column preprocessing. Numeric columns carry train-set
/// mean/stdev (stdev clamped to 1 when degenerate); categorical columns
/// carry the ordered category vocabulary seen at fit time.
struct Preprocess {
  struct Column {
    std::string name;
    bool categorical = false;
    double mean = 0.0;
    double stdev = 1.0;
    std::vector<std::string> categories;
  };
  std::vector<Column> columns;
  std::vector<std::string> label_names;
};

struct Dataset {
  Eigen::MatrixXd features;  // n x D
  Eigen::VectorXi labels;    // class ids in [0, num_classes)
  int num_classes = 0;
  SpatialShape shape;  // channels == 0 for flat data
  std::optional<Preprocess> preprocess;

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }
};

/// One-hot labels for a dataset slice.
Eigen::MatrixXd one_hot(const Eigen::VectorXi& labels, int num_classes);

/// IDX image + label pair (gzip handled transparently). Pixels become
/// doubles in [0,1]; shape is (1, H, W).
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

struct ColumnSpec {
  std::string name;
  bool categorical = false;
};

struct CsvSchema {
  std::vector<ColumnSpec> columns;  // feature columns, in output order
  std::string label_column;
};

/// Fit preprocessing on the file and encode it (z-score numerics, one-hot
/// categoricals, contiguous label ids).
Dataset load_csv(const std::string& path, const CsvSchema& schema);

/// Encode with an already-fitted transform (test-time path; no refit).
/// Unknown categories and unknown label names are errors.
Dataset load_csv(const std::string& path, const CsvSchema& schema,
                 const Preprocess& fitted);

enum class RawDtype { kUint8, kFloat32, kFloat64 };

/// Generic raw-tensor ingestion: a features file of n*D values of the
/// given dtype plus a labels file of n uint8 class ids. uint8 features
/// are scaled to [0,1].
Dataset load_raw_tensor(const std::string& features_path,
                        const std::string& labels_path, Eigen::Index n,
                        Eigen::Index D, RawDtype dtype, bool big_endian,
                        SpatialShape shape, int num_classes);

/// Gaussian blobs: class c is N(mu_c, I) with centers on a scaled simplex
/// (pairwise distance = separation). Requires D >= num_classes.
Dataset synth_blobs(Eigen::Index n, int num_classes, int D, double separation,
                    uint64_t seed);

/// Run provenance carried inside the bundle. Stored verbatim as JSON.
struct BundleMeta {
  std::string kernel;
  double epsilon = -1.0;  // < 0 when non-private
  double delta = -1.0;
  double sigma = 0.0;
  long steps = 0;
  double q = 0.0;
  double clip_norm = 0.0;
  double lambda_base = 0.0;
  uint64_t seed = 0;
  double final_loss = 0.0;
};

/// Writes <dir>/features.bin ("DKIP" magic, version, m, D header, then
/// little-endian f64 rows) and <dir>/bundle.json (labels, mask, meta).
/// Both files are written atomically (temp file + rename).
void export_bundle(const DistilledSet& ds, const BundleMeta& meta,
                   const std::string& dir);

struct LoadedBundle {
  DistilledSet ds;
  BundleMeta meta;
};
LoadedBundle load_bundle(const std::string& dir);

/// One image strip per class: that class's images side by side, each
/// min-max scaled to 0..255. PGM for 1 channel, PPM for 3. Returns the
/// paths written.
std::vector<std::string> export_image_grids(const DistilledSet& ds,
                                            const std::string& dir);

}  // namespace dpkip
