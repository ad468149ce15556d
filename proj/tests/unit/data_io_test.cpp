#include <doctest.h>

#include "poisonlr/data_io.hpp"
#include "poisonlr/errors.hpp"
#include "poisonlr/rng.hpp"

#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>
#include <sstream>

using namespace poisonlr;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("poisonlr_test_" + name);
  fs::create_directories(dir);
  return dir;
}

IdxImages tiny_images() {
  IdxImages img;
  img.count = 3;
  img.rows = 2;
  img.cols = 2;
  img.pixels = {0, 255, 128, 1, 10, 20, 30, 40, 255, 255, 0, 0};
  return img;
}

template <class F>
IdxError::Kind idx_kind(F&& f) {
  try {
    f();
  } catch (const IdxError& e) {
    return e.kind();
  }
  FAIL("no IdxError thrown");
  return IdxError::Kind::kIo;
}

std::string idx_message(const std::vector<std::uint8_t>& bytes) {
  try {
    parse_idx_images(bytes);
  } catch (const IdxError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("synthetic generator moments") {
  Rng rng(11);
  const std::size_t n = 100000;
  const Dataset d = sample_gaussian_classes(n, rng);
  CHECK(d.labels.head(n / 2).sum() == 0.0);
  CHECK(d.labels.tail(n / 2).sum() == static_cast<double>(n / 2));
  const GaussianClasses g;
  for (int cls = 0; cls < 2; ++cls) {
    const Matrix x = d.features.middleRows(cls * static_cast<Eigen::Index>(n / 2), static_cast<Eigen::Index>(n / 2));
    const double* mu = cls ? g.mean1 : g.mean0;
    for (int j = 0; j < 2; ++j) {
      const double mean = x.col(j).mean();
      const double var = (x.col(j).array() - mean).square().mean();
      // Standard error of the mean is sqrt(var / 5e4) < 0.008; allow ~5 sigma.
      CHECK(std::abs(mean - mu[j]) < 0.04);
      CHECK(std::abs(var - g.var[j]) < 0.08);
    }
  }
}

TEST_CASE("gen_synthetic") {
  const auto [a_tr, a_va] = gen_synthetic(32, 64, 5);
  const auto [b_tr, b_va] = gen_synthetic(32, 64, 5);
  const auto [c_tr, c_va] = gen_synthetic(32, 64, 6);
  CHECK(a_tr.rows() == 32);
  CHECK(a_va.rows() == 64);
  CHECK(a_tr.features == b_tr.features);
  CHECK(a_va.features == b_va.features);
  CHECK(a_tr.features != c_tr.features);
  CHECK(a_va.labels.sum() == 32.0);
  CHECK_THROWS_AS(gen_synthetic(31, 64, 1), ConfigError);
}

TEST_CASE("IDX encode and parse") {
  const IdxImages img = tiny_images();
  const auto bytes = encode_idx_images(img);
  CHECK(bytes.size() == 16 + 12);
  CHECK(bytes[2] == 0x08);
  CHECK(bytes[3] == 0x03);
  const IdxImages back = parse_idx_images(bytes);
  CHECK(back.count == 3);
  CHECK(back.rows == 2);
  CHECK(back.cols == 2);
  CHECK(back.pixels == img.pixels);

  const std::vector<std::uint8_t> labels = {0, 8, 3};
  CHECK(parse_idx_labels(encode_idx_labels(labels)) == labels);

  SUBCASE("bad magic names both values") {
    auto bad = bytes;
    bad[3] = 0x01;
    CHECK(idx_kind([&] { parse_idx_images(bad); }) == IdxError::Kind::kBadMagic);
    const std::string msg = idx_message(bad);
    CHECK(msg.find("0x00000803") != std::string::npos);
    CHECK(msg.find("0x00000801") != std::string::npos);
    CHECK(idx_kind([&] { parse_idx_labels(bytes); }) == IdxError::Kind::kBadMagic);
  }
  SUBCASE("truncation in header and payload") {
    const std::vector<std::uint8_t> head(bytes.begin(), bytes.begin() + 10);
    CHECK(idx_kind([&] { parse_idx_images(head); }) == IdxError::Kind::kTruncated);
    const std::vector<std::uint8_t> body(bytes.begin(), bytes.end() - 1);
    CHECK(idx_kind([&] { parse_idx_images(body); }) == IdxError::Kind::kTruncated);
    CHECK(idx_kind([] { parse_idx_images(std::vector<std::uint8_t>{}); }) == IdxError::Kind::kTruncated);
  }
}

TEST_CASE("load_idx") {
  const fs::path dir = scratch_dir("idx");
  write_file_bytes(dir / "img", encode_idx_images(tiny_images()));
  write_file_bytes(dir / "lab", encode_idx_labels({8, 3, 0}));

  const Dataset d = load_idx(dir / "img", dir / "lab", 0, 8);
  REQUIRE(d.rows() == 2);
  CHECK(d.dim() == 4);
  // Row order follows the file; digit 8 maps to label 1, digit 0 to label 0.
  CHECK(d.labels(0) == 1.0);
  CHECK(d.labels(1) == 0.0);
  CHECK(d.features(0, 0) == 0.0);
  CHECK(d.features(0, 1) == 1.0);
  CHECK(d.features(0, 2) == 128.0 / 255.0);
  CHECK(d.features(1, 0) == 1.0);

  write_file_bytes(dir / "short", encode_idx_labels({8, 3}));
  CHECK(idx_kind([&] { load_idx(dir / "img", dir / "short", 0, 8); }) == IdxError::Kind::kCountMismatch);
  CHECK(idx_kind([&] { load_idx(dir / "missing", dir / "lab", 0, 8); }) == IdxError::Kind::kIo);
  fs::remove_all(dir);
}

TEST_CASE("bundled mnist08 fixture") {
  const std::string base = std::string(POISONLR_DATA_DIR) + "/mnist08/";
  const Dataset pool = load_idx(base + "pool-images-idx3-ubyte", base + "pool-labels-idx1-ubyte", 0, 8);
  const Dataset test = load_idx(base + "test-images-idx3-ubyte", base + "test-labels-idx1-ubyte", 0, 8);
  CHECK(pool.dim() == 784);
  CHECK(test.dim() == 784);
  CHECK(pool.rows() >= 512 + 171);
  CHECK(pool.features.minCoeff() >= 0.0);
  CHECK(pool.features.maxCoeff() <= 1.0);
  CHECK(pool.labels.sum() > 0.0);
  CHECK(pool.labels.sum() < static_cast<double>(pool.rows()));
}

TEST_CASE("feature CSV") {
  SUBCASE("header detection") {
    const CsvLoad a = parse_feature_csv("x1,x2,y\n1,2,0\n3,4,1\n", false);
    CHECK(a.had_header);
    CHECK(a.data.rows() == 2);
    CHECK(a.data.features(1, 1) == 4.0);
    const CsvLoad b = parse_feature_csv("1,2,0\n3,4,1\n\n", false);
    CHECK_FALSE(b.had_header);
    CHECK(b.data.rows() == 2);
    CHECK(b.data.labels(1) == 1.0);
    CHECK(parse_feature_csv(" 1 , -2.5e1 ,1\r\n", false).data.features(0, 1) == -25.0);
  }
  SUBCASE("malformed input") {
    CHECK_THROWS_AS(parse_feature_csv("1,2,0\n3,1\n", false), ParseError);
    CHECK_THROWS_AS(parse_feature_csv("1,2,0\n3,abc,1\n", false), ParseError);
    CHECK_THROWS_AS(parse_feature_csv("1,2,2\n", false), ParseError);
    CHECK_THROWS_AS(parse_feature_csv("a,b\n", false), ParseError);
    CHECK_THROWS_AS(parse_feature_csv("0\n", false), ParseError);
    CHECK_THROWS_AS(parse_feature_csv("1,nan,0\n", false), ParseError);
    try {
      parse_feature_csv("1,2,0\n3,abc,1\n", false);
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
  SUBCASE("standardization") {
    Rng rng(3);
    std::ostringstream text;
    for (int i = 0; i < 50; ++i) text << 5.0 + 3.0 * rng.normal() << ",7," << (i % 2) << '\n';
    const CsvLoad c = parse_feature_csv(text.str(), true);
    REQUIRE(c.stats);
    CHECK(std::abs(c.data.features.col(0).mean()) <= 1e-10);
    CHECK(std::abs(c.data.features.col(0).squaredNorm() / 50.0 - 1.0) <= 1e-10);
    // Constant column: centred to zero, no division blow-up.
    CHECK(c.data.features.col(1).cwiseAbs().maxCoeff() == 0.0);
    CHECK(c.stats->stddev(1) == kStdFloor);
  }
  SUBCASE("wide rows") {
    std::ostringstream text;
    for (int r = 0; r < 3; ++r) {
      for (int j = 0; j < 2048; ++j) text << (r * j) % 7 << ',';
      text << r % 2 << '\n';
    }
    const CsvLoad w = parse_feature_csv(text.str(), false);
    CHECK(w.data.dim() == 2048);
    CHECK(w.data.features(2, 2047) == static_cast<double>((2 * 2047) % 7));
  }
  SUBCASE("file round trip") {
    const fs::path dir = scratch_dir("csv");
    auto [train, val] = gen_synthetic(8, 2, 1);
    write_feature_csv(dir / "t.csv", train);
    const CsvLoad back = load_feature_csv(dir / "t.csv", false);
    CHECK(back.data.features == train.features);
    CHECK(back.data.labels == train.labels);
    fs::remove_all(dir);
  }
}

TEST_CASE("split_dataset") {
  Rng rng(2);
  const Dataset pool = sample_gaussian_classes(200, rng);
  SplitSpec spec;
  spec.n_train = 51;
  spec.n_val = 30;
  spec.seed = 7;
  const Split a = split_dataset(pool, spec);
  const Split b = split_dataset(pool, spec);
  CHECK(a.train.rows() == 51);
  CHECK(a.val.rows() == 30);
  CHECK(a.remainder.rows() == 119);
  CHECK(a.train.labels.sum() == 25.0);
  CHECK(a.val.labels.sum() == 15.0);
  CHECK(a.train.features == b.train.features);
  CHECK(a.val.features == b.val.features);

  // Every pool row lands in exactly one part.
  std::multiset<double> seen;
  for (const Dataset* part : {&a.train, &a.val, &a.remainder})
    for (Eigen::Index i = 0; i < part->features.rows(); ++i) seen.insert(part->features(i, 0));
  std::multiset<double> all(pool.features.col(0).begin(), pool.features.col(0).end());
  CHECK(seen == all);

  spec.seed = 8;
  CHECK(split_dataset(pool, spec).train.features != a.train.features);
  spec.n_train = 190;
  CHECK_THROWS_AS(split_dataset(pool, spec), ConfigError);

  // 100 class-0 rows, 50 class-1 rows: 110 rows fit overall, but class 1 needs 45 + 10.
  std::vector<std::size_t> skewed(150);
  std::iota(skewed.begin(), skewed.end(), std::size_t{0});
  const Dataset lopsided = pool.select(skewed);
  spec.n_train = 90;
  spec.n_val = 20;
  CHECK_THROWS_AS(split_dataset(lopsided, spec), ConfigError);
  spec.balanced = false;
  CHECK(split_dataset(lopsided, spec).train.rows() == 90);
}

TEST_CASE("init_poison") {
  const auto [train, val] = gen_synthetic(4, 20, 3);
  const FeatureBox box = FeatureBox::uniform(2, -9.5, 9.5);
  const PoisonBatch p = init_poison(val, 6, 1, box);
  REQUIRE(p.features.rows() == 6);
  std::set<std::size_t> rows;
  for (Eigen::Index k = 0; k < 6; ++k) {
    for (Eigen::Index i = 0; i < val.features.rows(); ++i) {
      if (val.features.row(i) == p.features.row(k)) {
        rows.insert(static_cast<std::size_t>(i));
        CHECK(p.labels(k) == 1.0 - val.labels(i));
      }
    }
  }
  CHECK(rows.size() == 6);
  CHECK(init_poison(val, 6, 1, box).features == p.features);
  CHECK(init_poison(val, 0, 1, box).features.rows() == 0);
  CHECK_THROWS_AS(init_poison(val, 21, 1, box), ConfigError);
}
