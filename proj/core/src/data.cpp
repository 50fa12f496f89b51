#include "dpkip/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dpkip/errors.hpp"

namespace dpkip {

namespace {

using nlohmann::json;

constexpr uint32_t kIdxImageMagic = 0x00000803;
constexpr uint32_t kIdxLabelMagic = 0x00000801;
constexpr uint32_t kBundleVersion = 1;

uint32_t read_be32(gzFile f, const std::string& path, long offset) {
  unsigned char b[4];
  if (gzread(f, b, 4) != 4)
    throw DataError(path + ": truncated at offset " + std::to_string(offset));
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) |
         (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

struct GzCloser {
  gzFile f;
  ~GzCloser() {
    if (f) gzclose(f);
  }
};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  for (auto& s : out) {
    size_t a = s.find_first_not_of(" \t");
    size_t b = s.find_last_not_of(" \t");
    s = (a == std::string::npos) ? "" : s.substr(a, b - a + 1);
  }
  return out;
}

double parse_number(const std::string& cell, size_t row,
                    const std::string& col) {
  try {
    size_t pos = 0;
    double v = std::stod(cell, &pos);
    if (pos != cell.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw DataError("unparsable numeric cell at row " + std::to_string(row) +
                    ", column '" + col + "': '" + cell + "'");
  }
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  t.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != t.header.size())
      throw DataError(path + ": row " + std::to_string(t.rows.size() + 1) +
                      " has " + std::to_string(cells.size()) +
                      " cells, header has " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(cells));
  }
  if (t.rows.empty()) throw DataError(path + ": no data rows");
  return t;
}

size_t column_index(const CsvTable& t, const std::string& name,
                    const std::string& path) {
  for (size_t i = 0; i < t.header.size(); ++i)
    if (t.header[i] == name) return i;
  throw DataError(path + ": missing column '" + name + "'");
}

Dataset encode_csv(const CsvTable& t, const CsvSchema& schema,
                   const Preprocess& pre, const std::string& path) {
  const size_t label_idx = column_index(t, schema.label_column, path);
  std::vector<size_t> col_idx(schema.columns.size());
  for (size_t c = 0; c < schema.columns.size(); ++c)
    col_idx[c] = column_index(t, schema.columns[c].name, path);

  Eigen::Index D = 0;
  for (const auto& col : pre.columns)
    D += col.categorical ? static_cast<Eigen::Index>(col.categories.size()) : 1;

  const size_t n = t.rows.size();
  Dataset ds;
  ds.features = Eigen::MatrixXd::Zero(n, D);
  ds.labels.resize(n);
  ds.num_classes = static_cast<int>(pre.label_names.size());
  ds.preprocess = pre;

  for (size_t r = 0; r < n; ++r) {
    Eigen::Index d = 0;
    for (size_t c = 0; c < pre.columns.size(); ++c) {
      const auto& col = pre.columns[c];
      const std::string& cell = t.rows[r][col_idx[c]];
      if (col.categorical) {
        auto it =
            std::find(col.categories.begin(), col.categories.end(), cell);
        if (it == col.categories.end())
          throw DataError("unknown category '" + cell + "' at row " +
                          std::to_string(r + 1) + ", column '" + col.name +
                          "'");
        ds.features(r, d + (it - col.categories.begin())) = 1.0;
        d += static_cast<Eigen::Index>(col.categories.size());
      } else {
        double v = parse_number(cell, r + 1, col.name);
        ds.features(r, d++) = (v - col.mean) / col.stdev;
      }
    }
    const std::string& lab = t.rows[r][label_idx];
    auto it = std::find(pre.label_names.begin(), pre.label_names.end(), lab);
    if (it == pre.label_names.end())
      throw DataError("unknown label '" + lab + "' at row " +
                      std::to_string(r + 1));
    ds.labels[r] = static_cast<int>(it - pre.label_names.begin());
  }
  return ds;
}

void write_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw DataError("cannot rename " + tmp + " -> " + path);
}

void append_u32_le(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s += static_cast<char>((v >> (8 * i)) & 0xff);
}

uint32_t read_u32_le(const std::string& s, size_t off) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= uint32_t(static_cast<unsigned char>(s[off + i])) << (8 * i);
  return v;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

Eigen::MatrixXd one_hot(const Eigen::VectorXi& labels, int num_classes) {
  Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(labels.size(), num_classes);
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw DataError("label " + std::to_string(labels[i]) +
                      " out of range at row " + std::to_string(i));
    Y(i, labels[i]) = 1.0;
  }
  return Y;
}

Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path) {
  GzCloser img{gzopen(images_path.c_str(), "rb")};
  if (!img.f) throw DataError("cannot open " + images_path);
  uint32_t magic = read_be32(img.f, images_path, 0);
  if (magic != kIdxImageMagic)
    throw DataError(images_path + ": bad image magic 0x" + [&] {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%08x", magic);
      return std::string(buf);
    }() + " at offset 0");
  const uint32_t n = read_be32(img.f, images_path, 4);
  const uint32_t H = read_be32(img.f, images_path, 8);
  const uint32_t W = read_be32(img.f, images_path, 12);

  GzCloser lab{gzopen(labels_path.c_str(), "rb")};
  if (!lab.f) throw DataError("cannot open " + labels_path);
  uint32_t lmagic = read_be32(lab.f, labels_path, 0);
  if (lmagic != kIdxLabelMagic)
    throw DataError(labels_path + ": bad label magic at offset 0");
  const uint32_t ln = read_be32(lab.f, labels_path, 4);
  if (ln != n)
    throw DataError("image/label count mismatch: " + std::to_string(n) +
                    " vs " + std::to_string(ln));
  if (n == 0) throw DataError(images_path + ": empty dataset");

  const size_t pixels = static_cast<size_t>(H) * W;
  std::vector<unsigned char> buf(pixels);
  Dataset ds;
  ds.features.resize(n, static_cast<Eigen::Index>(pixels));
  for (uint32_t i = 0; i < n; ++i) {
    if (gzread(img.f, buf.data(), static_cast<unsigned>(pixels)) !=
        static_cast<int>(pixels))
      throw DataError(images_path + ": truncated payload at image " +
                      std::to_string(i));
    for (size_t p = 0; p < pixels; ++p)
      ds.features(i, static_cast<Eigen::Index>(p)) = buf[p] / 255.0;
  }
  ds.labels.resize(n);
  std::vector<unsigned char> lbuf(n);
  if (gzread(lab.f, lbuf.data(), n) != static_cast<int>(n))
    throw DataError(labels_path + ": truncated payload");
  int max_label = 0;
  for (uint32_t i = 0; i < n; ++i) {
    ds.labels[i] = lbuf[i];
    max_label = std::max(max_label, int(lbuf[i]));
  }
  ds.num_classes = max_label + 1;
  ds.shape = {1, static_cast<int>(H), static_cast<int>(W)};
  return ds;
}

Dataset load_csv(const std::string& path, const CsvSchema& schema) {
  auto t = read_csv_table(path);
  const size_t label_idx = column_index(t, schema.label_column, path);

  Preprocess pre;
  for (const auto& spec : schema.columns) {
    size_t ci = column_index(t, spec.name, path);
    Preprocess::Column col;
    col.name = spec.name;
    col.categorical = spec.categorical;
    if (spec.categorical) {
      std::set<std::string> cats;
      for (const auto& row : t.rows) cats.insert(row[ci]);
      col.categories.assign(cats.begin(), cats.end());
    } else {
      double sum = 0.0;
      for (size_t r = 0; r < t.rows.size(); ++r)
        sum += parse_number(t.rows[r][ci], r + 1, spec.name);
      col.mean = sum / t.rows.size();
      double ss = 0.0;
      for (size_t r = 0; r < t.rows.size(); ++r) {
        double v = parse_number(t.rows[r][ci], r + 1, spec.name) - col.mean;
        ss += v * v;
      }
      col.stdev = std::sqrt(ss / t.rows.size());
      if (!(col.stdev > 1e-12)) col.stdev = 1.0;  // degenerate column
    }
    pre.columns.push_back(std::move(col));
  }

  std::set<std::string> labels;
  for (const auto& row : t.rows) labels.insert(row[label_idx]);
  if (labels.size() < 2) throw DataError(path + ": fewer than 2 label classes");
  pre.label_names.assign(labels.begin(), labels.end());

  return encode_csv(t, schema, pre, path);
}

Dataset load_csv(const std::string& path, const CsvSchema& schema,
                 const Preprocess& fitted) {
  auto t = read_csv_table(path);
  return encode_csv(t, schema, fitted, path);
}

Dataset load_raw_tensor(const std::string& features_path,
                        const std::string& labels_path, Eigen::Index n,
                        Eigen::Index D, RawDtype dtype, bool big_endian,
                        SpatialShape shape, int num_classes) {
  if (n < 1 || D < 1) throw ConfigError("raw tensor: n and D must be >= 1");
  std::string fb = read_file(features_path);
  const size_t elem = dtype == RawDtype::kUint8 ? 1
                      : dtype == RawDtype::kFloat32 ? 4
                                                    : 8;
  const size_t want = static_cast<size_t>(n) * D * elem;
  if (fb.size() < want)
    throw DataError(features_path + ": expected " + std::to_string(want) +
                    " bytes, got " + std::to_string(fb.size()));

  Dataset ds;
  ds.features.resize(n, D);
  const auto* p = reinterpret_cast<const unsigned char*>(fb.data());
  for (Eigen::Index i = 0; i < n * D; ++i) {
    double v;
    if (dtype == RawDtype::kUint8) {
      v = p[i] / 255.0;
    } else {
      unsigned char b[8];
      std::memcpy(b, p + static_cast<size_t>(i) * elem, elem);
      if (big_endian) std::reverse(b, b + elem);
      if (dtype == RawDtype::kFloat32) {
        float f;
        std::memcpy(&f, b, 4);
        v = f;
      } else {
        std::memcpy(&v, b, 8);
      }
    }
    ds.features(i / D, i % D) = v;
  }

  std::string lb = read_file(labels_path);
  if (lb.size() < static_cast<size_t>(n))
    throw DataError(labels_path + ": expected " + std::to_string(n) +
                    " label bytes, got " + std::to_string(lb.size()));
  ds.labels.resize(n);
  for (Eigen::Index i = 0; i < n; ++i)
    ds.labels[i] = static_cast<unsigned char>(lb[static_cast<size_t>(i)]);
  ds.num_classes = num_classes;
  ds.shape = shape;
  for (Eigen::Index i = 0; i < n; ++i)
    if (ds.labels[i] >= num_classes)
      throw DataError("label out of range at row " + std::to_string(i));
  return ds;
}

Dataset synth_blobs(Eigen::Index n, int num_classes, int D, double separation,
                    uint64_t seed) {
  if (num_classes < 1 || D < 1) throw ConfigError("blobs: bad dimensions");
  if (n % num_classes != 0)
    throw ConfigError("blobs: n = " + std::to_string(n) +
                      " not divisible by num_classes = " +
                      std::to_string(num_classes));
  if (D < num_classes)
    throw ConfigError("blobs: D must be >= num_classes for simplex centers");
  if (separation < 0.0) throw ConfigError("blobs: separation must be >= 0");

  // mu_c = (separation / sqrt(2)) e_c gives pairwise distance = separation.
  const double scale = separation / std::sqrt(2.0);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  Dataset ds;
  ds.features.resize(n, D);
  ds.labels.resize(n);
  ds.num_classes = num_classes;
  const Eigen::Index per = n / num_classes;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = static_cast<int>(i / per);
    ds.labels[i] = c;
    for (int d = 0; d < D; ++d)
      ds.features(i, d) = normal(rng) + (d == c ? scale : 0.0);
  }
  return ds;
}

void export_bundle(const DistilledSet& ds, const BundleMeta& meta,
                   const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  const int m = static_cast<int>(ds.size());
  const int D = static_cast<int>(ds.dim());

  std::string feat;
  feat.reserve(16 + static_cast<size_t>(m) * D * 8);
  feat += "DKIP";
  append_u32_le(feat, kBundleVersion);
  append_u32_le(feat, static_cast<uint32_t>(m));
  append_u32_le(feat, static_cast<uint32_t>(D));
  for (int i = 0; i < m; ++i)
    for (int d = 0; d < D; ++d) {
      double v = ds.X_s(i, d);
      char b[8];
      std::memcpy(b, &v, 8);
      feat.append(b, 8);
    }
  write_atomic(dir + "/features.bin", feat);

  json j;
  j["version"] = kBundleVersion;
  j["num_classes"] = ds.num_classes;
  std::vector<int> labels(m);
  for (int i = 0; i < m; ++i) {
    int c = 0;
    ds.Y_s.row(i).maxCoeff(&c);
    labels[i] = c;
  }
  j["labels"] = labels;
  j["shape"] = {ds.shape.channels, ds.shape.height, ds.shape.width};
  if (ds.pixel_mask) {
    std::vector<std::string> mask(m);
    for (int i = 0; i < m; ++i) {
      mask[i].resize(D);
      for (int d = 0; d < D; ++d)
        mask[i][d] = (*ds.pixel_mask)(i, d) ? '1' : '0';
    }
    j["pixel_mask"] = mask;
  }
  j["meta"] = {{"kernel", meta.kernel},     {"epsilon", meta.epsilon},
               {"delta", meta.delta},       {"sigma", meta.sigma},
               {"steps", meta.steps},       {"q", meta.q},
               {"clip_norm", meta.clip_norm},
               {"lambda_base", meta.lambda_base},
               {"seed", meta.seed},         {"final_loss", meta.final_loss}};
  write_atomic(dir + "/bundle.json", j.dump(2) + "\n");
}

LoadedBundle load_bundle(const std::string& dir) {
  std::string feat = read_file(dir + "/features.bin");
  if (feat.size() < 16 || feat.compare(0, 4, "DKIP") != 0)
    throw DataError(dir + "/features.bin: bad bundle magic");
  uint32_t version = read_u32_le(feat, 4);
  if (version != kBundleVersion)
    throw DataError("bundle version mismatch: file has " +
                    std::to_string(version) + ", expected " +
                    std::to_string(kBundleVersion));
  const uint32_t m = read_u32_le(feat, 8);
  const uint32_t D = read_u32_le(feat, 12);
  if (feat.size() < 16 + static_cast<size_t>(m) * D * 8)
    throw DataError(dir + "/features.bin: truncated payload");

  json j;
  try {
    j = json::parse(read_file(dir + "/bundle.json"));
  } catch (const json::exception& e) {
    throw DataError(dir + "/bundle.json: " + e.what());
  }
  if (j.value("version", 0u) != kBundleVersion)
    throw DataError("bundle.json version mismatch");

  LoadedBundle out;
  out.ds.num_classes = j.at("num_classes").get<int>();
  auto shape = j.at("shape");
  out.ds.shape = {shape[0].get<int>(), shape[1].get<int>(),
                  shape[2].get<int>()};
  out.ds.X_s.resize(m, D);
  for (uint32_t i = 0; i < m; ++i)
    for (uint32_t d = 0; d < D; ++d) {
      double v;
      std::memcpy(&v, feat.data() + 16 + (static_cast<size_t>(i) * D + d) * 8,
                  8);
      out.ds.X_s(i, d) = v;
    }
  auto labels = j.at("labels").get<std::vector<int>>();
  if (labels.size() != m) throw DataError("bundle label count mismatch");
  Eigen::VectorXi ids(m);
  for (uint32_t i = 0; i < m; ++i) ids[i] = labels[i];
  out.ds.Y_s = one_hot(ids, out.ds.num_classes);
  if (j.contains("pixel_mask")) {
    auto mask = j.at("pixel_mask").get<std::vector<std::string>>();
    if (mask.size() != m) throw DataError("bundle mask row count mismatch");
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> pm(m, D);
    for (uint32_t i = 0; i < m; ++i) {
      if (mask[i].size() != D) throw DataError("bundle mask width mismatch");
      for (uint32_t d = 0; d < D; ++d) pm(i, d) = mask[i][d] == '1';
    }
    out.ds.pixel_mask = std::move(pm);
  }

  const auto& mj = j.at("meta");
  out.meta.kernel = mj.at("kernel").get<std::string>();
  out.meta.epsilon = mj.at("epsilon").get<double>();
  out.meta.delta = mj.at("delta").get<double>();
  out.meta.sigma = mj.at("sigma").get<double>();
  out.meta.steps = mj.at("steps").get<long>();
  out.meta.q = mj.at("q").get<double>();
  out.meta.clip_norm = mj.at("clip_norm").get<double>();
  out.meta.lambda_base = mj.at("lambda_base").get<double>();
  out.meta.seed = mj.at("seed").get<uint64_t>();
  out.meta.final_loss = mj.at("final_loss").get<double>();
  return out;
}

std::vector<std::string> export_image_grids(const DistilledSet& ds,
                                            const std::string& dir) {
  if (!ds.shape.is_image())
    throw ConfigError("image export requires spatial shape metadata");
  const int C = ds.shape.channels;
  if (C != 1 && C != 3)
    throw ConfigError("image export supports 1 or 3 channels");
  const int H = ds.shape.height, W = ds.shape.width;
  const int m = static_cast<int>(ds.size());

  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  std::vector<std::string> paths;
  for (int cls = 0; cls < ds.num_classes; ++cls) {
    std::vector<int> rows;
    for (int i = 0; i < m; ++i) {
      int c = 0;
      ds.Y_s.row(i).maxCoeff(&c);
      if (c == cls) rows.push_back(i);
    }
    if (rows.empty()) continue;
    const int gw = static_cast<int>(rows.size()) * W;
    std::string body;
    body.resize(static_cast<size_t>(C) * H * gw);
    for (size_t k = 0; k < rows.size(); ++k) {
      // Per-image min-max scaling for display.
      double lo = ds.X_s.row(rows[k]).minCoeff();
      double hi = ds.X_s.row(rows[k]).maxCoeff();
      double span = hi - lo > 0 ? hi - lo : 1.0;
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) {
            double v =
                ds.X_s(rows[k], (static_cast<Eigen::Index>(c) * H + y) * W + x);
            int px = static_cast<int>(std::lround((v - lo) / span * 255.0));
            px = std::clamp(px, 0, 255);
            // PPM interleaves channels per pixel.
            size_t off = C == 1
                             ? static_cast<size_t>(y) * gw + k * W + x
                             : (static_cast<size_t>(y) * gw + k * W + x) * 3 +
                                   c;
            body[off] = static_cast<char>(px);
          }
    }
    std::string header = std::string(C == 1 ? "P5" : "P6") + " " +
                         std::to_string(gw) + " " + std::to_string(H) +
                         " 255\n";
    std::string path = dir + "/class_" + std::to_string(cls) +
                       (C == 1 ? ".pgm" : ".ppm");
    write_atomic(path, header + body);
    paths.push_back(path);
  }
  return paths;
}

}  // namespace dpkip
