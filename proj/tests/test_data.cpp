#include <doctest.h>

#include <zlib.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "dpkip/data.hpp"
#include "dpkip/errors.hpp"

using namespace dpkip;

namespace {

std::string scratch_dir() {
  auto dir = std::filesystem::temp_directory_path() / "dpkip_data_tests";
  std::filesystem::create_directories(dir);
  return dir.string();
}

void be32(std::string& s, uint32_t v) {
  for (int i = 3; i >= 0; --i) s += char((v >> (8 * i)) & 0xff);
}

void write_plain(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(bytes.data(), std::streamsize(bytes.size()));
}

void write_gz(const std::string& path, const std::string& bytes) {
  gzFile f = gzopen(path.c_str(), "wb");
  REQUIRE(f != nullptr);
  REQUIRE(gzwrite(f, bytes.data(), unsigned(bytes.size())) ==
          int(bytes.size()));
  gzclose(f);
}

// 2 images of 2x3 with known pixels, labels 1 and 0.
std::pair<std::string, std::string> idx_fixture() {
  std::string img;
  be32(img, 0x803);
  be32(img, 2);
  be32(img, 2);
  be32(img, 3);
  for (int k = 0; k < 12; ++k) img += char(k * 20);
  std::string lab;
  be32(lab, 0x801);
  be32(lab, 2);
  lab += char(1);
  lab += char(0);
  return {img, lab};
}

void write_csv(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  f << text;
}

}  // namespace

TEST_CASE("IDX fixture loads with exact k/255 pixels, gzip and plain") {
  auto dir = scratch_dir();
  auto [img, lab] = idx_fixture();

  for (bool gz : {false, true}) {
    std::string ip = dir + (gz ? "/img.gz" : "/img.idx");
    std::string lp = dir + (gz ? "/lab.gz" : "/lab.idx");
    if (gz) {
      write_gz(ip, img);
      write_gz(lp, lab);
    } else {
      write_plain(ip, img);
      write_plain(lp, lab);
    }
    Dataset ds = load_idx(ip, lp);
    CHECK(ds.size() == 2);
    CHECK(ds.dim() == 6);
    CHECK(ds.shape.channels == 1);
    CHECK(ds.shape.height == 2);
    CHECK(ds.shape.width == 3);
    CHECK(ds.num_classes == 2);
    CHECK(ds.labels[0] == 1);
    CHECK(ds.labels[1] == 0);
    for (int i = 0; i < 2; ++i)
      for (int p = 0; p < 6; ++p)
        CHECK(ds.features(i, p) == (i * 6 + p) * 20 / 255.0);
  }
}

TEST_CASE("IDX malformed inputs are rejected with positioned errors") {
  auto dir = scratch_dir();
  auto [img, lab] = idx_fixture();

  std::string bad_magic = img;
  bad_magic[3] = 0x01;
  write_plain(dir + "/bm.idx", bad_magic);
  write_plain(dir + "/lab.idx", lab);
  CHECK_THROWS_WITH_AS(load_idx(dir + "/bm.idx", dir + "/lab.idx"),
                       doctest::Contains("offset 0"), DataError);

  std::string truncated = img.substr(0, img.size() - 3);
  write_plain(dir + "/tr.idx", truncated);
  CHECK_THROWS_AS(load_idx(dir + "/tr.idx", dir + "/lab.idx"), DataError);

  std::string lab3 = lab;
  lab3[7] = 3;  // count 3 vs 2 images
  lab3 += char(2);
  write_plain(dir + "/lab3.idx", lab3);
  write_plain(dir + "/img.idx", img);
  CHECK_THROWS_WITH_AS(load_idx(dir + "/img.idx", dir + "/lab3.idx"),
                       doctest::Contains("mismatch"), DataError);
}

TEST_CASE("CSV: one-hot widths, z-scoring, degenerate column, round trip") {
  auto dir = scratch_dir();
  write_csv(dir + "/t.csv",
            "num,cat,konst,y\n"
            "1.0,red,5,a\n"
            "2.0,blue,5,b\n"
            "3.0,red,5,a\n");
  CsvSchema schema;
  schema.columns = {{"num", false}, {"cat", true}, {"konst", false}};
  schema.label_column = "y";

  Dataset ds = load_csv(dir + "/t.csv", schema);
  CHECK(ds.dim() == 1 + 2 + 1);
  CHECK(ds.num_classes == 2);
  // z-scored numeric: mean 2, population stdev sqrt(2/3)
  double sd = std::sqrt(2.0 / 3.0);
  CHECK(ds.features(0, 0) == doctest::Approx((1.0 - 2.0) / sd).epsilon(1e-12));
  // categorical columns ordered alphabetically: blue, red
  CHECK(ds.features(0, 1) == 0.0);
  CHECK(ds.features(0, 2) == 1.0);
  CHECK(ds.features(1, 1) == 1.0);
  // constant column clamps the divisor and becomes all zeros
  CHECK(ds.features.col(3).cwiseAbs().maxCoeff() == 0.0);

  // Round trip: re-encoding the training rows with the fitted transform
  // reproduces the matrix bitwise.
  Dataset again = load_csv(dir + "/t.csv", schema, *ds.preprocess);
  CHECK((again.features - ds.features).cwiseAbs().maxCoeff() == 0.0);
  for (int i = 0; i < 3; ++i) CHECK(again.labels[i] == ds.labels[i]);
}

TEST_CASE("CSV error positions and degenerate class count") {
  auto dir = scratch_dir();
  write_csv(dir + "/bad.csv", "a,y\n1.0,x\noops,x\n");
  CsvSchema schema;
  schema.columns = {{"a", false}};
  schema.label_column = "y";
  CHECK_THROWS_WITH_AS(load_csv(dir + "/bad.csv", schema),
                       doctest::Contains("row 2"), DataError);

  write_csv(dir + "/one.csv", "a,y\n1.0,x\n2.0,x\n");
  CHECK_THROWS_AS(load_csv(dir + "/one.csv", schema), DataError);

  schema.label_column = "missing";
  write_csv(dir + "/m.csv", "a,y\n1.0,x\n2.0,z\n");
  CHECK_THROWS_WITH_AS(load_csv(dir + "/m.csv", schema),
                       doctest::Contains("missing"), DataError);
}

TEST_CASE("blobs: reproducibility, divisibility, separation") {
  Dataset a = synth_blobs(40, 4, 6, 6.0, 9);
  Dataset b = synth_blobs(40, 4, 6, 6.0, 9);
  CHECK((a.features - b.features).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(synth_blobs(41, 4, 6, 6.0, 9), ConfigError);
  CHECK_THROWS_AS(synth_blobs(8, 4, 2, 6.0, 9), ConfigError);

  // Nearest-centroid on held-out data exceeds 99% at separation 8.
  Dataset train = synth_blobs(2000, 2, 2, 8.0, 1);
  Dataset test = synth_blobs(2000, 2, 2, 8.0, 2);
  Eigen::MatrixXd centroid = Eigen::MatrixXd::Zero(2, 2);
  Eigen::Vector2d count = Eigen::Vector2d::Zero();
  for (int i = 0; i < 2000; ++i) {
    centroid.row(train.labels[i]) += train.features.row(i);
    count[train.labels[i]] += 1;
  }
  centroid.array().colwise() /= count.array();
  int correct = 0;
  for (int i = 0; i < 2000; ++i) {
    double d0 = (test.features.row(i) - centroid.row(0)).norm();
    double d1 = (test.features.row(i) - centroid.row(1)).norm();
    correct += (d1 < d0 ? 1 : 0) == test.labels[i];
  }
  CHECK(correct / 2000.0 > 0.99);
}

TEST_CASE("raw tensor loader handles dtypes and endianness") {
  auto dir = scratch_dir();
  std::vector<double> vals = {0.5, -1.25, 3.0, 42.0};
  std::string le(reinterpret_cast<const char*>(vals.data()), 32);
  std::string be;
  for (int v = 0; v < 4; ++v)
    for (int b = 7; b >= 0; --b) be += le[v * 8 + b];
  std::string labs;
  labs += char(1);
  labs += char(0);
  write_plain(dir + "/f_le.bin", le);
  write_plain(dir + "/f_be.bin", be);
  write_plain(dir + "/l.bin", labs);

  Dataset dle = load_raw_tensor(dir + "/f_le.bin", dir + "/l.bin", 2, 2,
                                RawDtype::kFloat64, false, {}, 2);
  Dataset dbe = load_raw_tensor(dir + "/f_be.bin", dir + "/l.bin", 2, 2,
                                RawDtype::kFloat64, true, {}, 2);
  CHECK((dle.features - dbe.features).cwiseAbs().maxCoeff() == 0.0);
  CHECK(dle.features(0, 1) == -1.25);
  CHECK(dle.labels[0] == 1);

  std::string u8 = {char(0), char(255), char(51), char(102)};
  write_plain(dir + "/f_u8.bin", u8);
  Dataset du = load_raw_tensor(dir + "/f_u8.bin", dir + "/l.bin", 2, 2,
                               RawDtype::kUint8, false, {}, 2);
  CHECK(du.features(0, 1) == 1.0);
  CHECK(du.features(1, 0) == doctest::Approx(51 / 255.0).epsilon(1e-15));

  CHECK_THROWS_AS(load_raw_tensor(dir + "/f_u8.bin", dir + "/l.bin", 4, 2,
                                  RawDtype::kUint8, false, {}, 2),
                  DataError);
}

TEST_CASE("bundle export/load is a bitwise round trip including the mask") {
  auto dir = scratch_dir() + "/bundle_rt";
  DistilledSet ds = init_distilled(6, 16, 3, 2, 77, 0.25, {1, 4, 4});
  BundleMeta meta;
  meta.kernel = "rbf(bandwidth=1)";
  meta.epsilon = 10.0;
  meta.delta = 1e-5;
  meta.sigma = 0.71;
  meta.steps = 123;
  meta.q = 0.01;
  meta.clip_norm = 1e-2;
  meta.lambda_base = 1e-6;
  meta.seed = 77;
  meta.final_loss = 0.123456789012345;
  export_bundle(ds, meta, dir);

  LoadedBundle lb = load_bundle(dir);
  CHECK(lb.ds.X_s.rows() == 6);
  CHECK((lb.ds.X_s.array() == ds.X_s.array()).all());
  CHECK((lb.ds.Y_s - ds.Y_s).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(lb.ds.pixel_mask.has_value());
  CHECK((lb.ds.pixel_mask->array() == ds.pixel_mask->array()).all());
  CHECK(lb.meta.sigma == meta.sigma);
  CHECK(lb.meta.final_loss == meta.final_loss);
  CHECK(lb.meta.steps == 123);

  // Corrupt the magic.
  std::fstream f(dir + "/features.bin",
                 std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(0);
  f.put('X');
  f.close();
  CHECK_THROWS_WITH_AS(load_bundle(dir), doctest::Contains("magic"),
                       DataError);
}

TEST_CASE("PGM grid export header and geometry") {
  auto dir = scratch_dir() + "/grids";
  DistilledSet ds = init_distilled(2, 28 * 28, 2, 1, 5, 0.0, {1, 28, 28});
  auto paths = export_image_grids(ds, dir);
  REQUIRE(paths.size() == 2);
  std::ifstream f(paths[0], std::ios::binary);
  std::string header(12, '\0');
  f.read(header.data(), 12);
  CHECK(header == "P5 28 28 255");
  f.seekg(0, std::ios::end);
  CHECK(f.tellg() == std::streamoff(13 + 28 * 28));  // header + \n + raster
}

TEST_CASE("one_hot validates the label range") {
  Eigen::VectorXi labels(3);
  labels << 0, 2, 1;
  Eigen::MatrixXd Y = one_hot(labels, 3);
  CHECK(Y.sum() == 3.0);
  CHECK(Y(1, 2) == 1.0);
  labels << 0, 3, 1;
  CHECK_THROWS_AS(one_hot(labels, 3), DataError);
}
