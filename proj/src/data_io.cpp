#include "poisonlr/data_io.hpp"

#include "poisonlr/rng.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <numeric>
#include <sstream>

namespace poisonlr {

// ---------------------------------------------------------------------------
// Synthetic

Dataset sample_gaussian_classes(std::size_t n, Rng& rng, const GaussianClasses& g) {
  const auto rows = static_cast<Eigen::Index>(n);
  Matrix x(rows, 2);
  Vector y(rows);
  const std::size_t half = n / 2;
  const double sd[2] = {std::sqrt(g.var[0]), std::sqrt(g.var[1])};
  for (std::size_t i = 0; i < n; ++i) {
    const bool one = i >= half;
    const double* mu = one ? g.mean1 : g.mean0;
    const auto r = static_cast<Eigen::Index>(i);
    x(r, 0) = mu[0] + sd[0] * rng.normal();
    x(r, 1) = mu[1] + sd[1] * rng.normal();
    y[r] = one ? 1.0 : 0.0;
  }
  return {std::move(x), std::move(y)};
}

std::pair<Dataset, Dataset> gen_synthetic(std::size_t n_train, std::size_t n_val, std::uint64_t seed) {
  if (n_train % 2 || n_val % 2) throw ConfigError("synthetic split sizes must be even");
  Rng rng(seed);
  Dataset train = sample_gaussian_classes(n_train, rng);
  Dataset val = sample_gaussian_classes(n_val, rng);
  return {std::move(train), std::move(val)};
}

// ---------------------------------------------------------------------------
// IDX

namespace {

std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << std::setw(8) << std::setfill('0') << v;
  return os.str();
}

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset, const char* field) {
  if (offset + 4 > bytes.size()) {
    throw IdxError(IdxError::Kind::kTruncated,
                   std::string("IDX truncated while reading ") + field + " at byte " + std::to_string(offset),
                   offset);
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void expect_magic(std::uint32_t found, std::uint32_t expected) {
  if (found != expected) {
    throw IdxError(IdxError::Kind::kBadMagic,
                   "IDX bad magic at byte 0: expected " + hex32(expected) + ", found " + hex32(found), 0);
  }
}

void expect_payload(std::span<const std::uint8_t> bytes, std::size_t header, std::size_t payload) {
  if (bytes.size() < header + payload) {
    throw IdxError(IdxError::Kind::kTruncated,
                   "IDX payload truncated at byte " + std::to_string(bytes.size()) + ": expected " +
                       std::to_string(header + payload) + " bytes",
                   bytes.size());
  }
}

}  // namespace

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes) {
  expect_magic(read_be32(bytes, 0, "magic"), kIdxImagesMagic);
  IdxImages img;
  img.count = read_be32(bytes, 4, "image count");
  img.rows = read_be32(bytes, 8, "row count");
  img.cols = read_be32(bytes, 12, "column count");
  const std::size_t payload = std::size_t{img.count} * img.rows * img.cols;
  expect_payload(bytes, 16, payload);
  img.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(payload));
  return img;
}

std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes) {
  expect_magic(read_be32(bytes, 0, "magic"), kIdxLabelsMagic);
  const std::uint32_t count = read_be32(bytes, 4, "label count");
  expect_payload(bytes, 8, count);
  return {bytes.begin() + 8, bytes.begin() + 8 + count};
}

std::vector<std::uint8_t> encode_idx_images(const IdxImages& images) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + images.pixels.size());
  put_be32(out, kIdxImagesMagic);
  put_be32(out, images.count);
  put_be32(out, images.rows);
  put_be32(out, images.cols);
  out.insert(out.end(), images.pixels.begin(), images.pixels.end());
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(const std::vector<std::uint8_t>& labels) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + labels.size());
  put_be32(out, kIdxLabelsMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxError::Kind::kIo, "cannot open " + path.string(), 0);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 int class_a, int class_b) {
  const IdxImages img = parse_idx_images(read_file_bytes(images_path));
  const std::vector<std::uint8_t> labels = parse_idx_labels(read_file_bytes(labels_path));
  if (labels.size() != img.count) {
    throw IdxError(IdxError::Kind::kCountMismatch,
                   "IDX count mismatch at byte 4: " + std::to_string(img.count) + " images but " +
                       std::to_string(labels.size()) + " labels",
                   4);
  }
  const std::size_t m = std::size_t{img.rows} * img.cols;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == class_a || labels[i] == class_b) keep.push_back(i);
  }
  Matrix x(static_cast<Eigen::Index>(keep.size()), static_cast<Eigen::Index>(m));
  Vector y(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const std::uint8_t* px = img.pixels.data() + keep[k] * m;
    for (std::size_t j = 0; j < m; ++j) {
      x(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = static_cast<double>(px[j]) / 255.0;
    }
    y[static_cast<Eigen::Index>(k)] = labels[keep[k]] == class_a ? 0.0 : 1.0;
  }
  return {std::move(x), std::move(y)};
}

// ---------------------------------------------------------------------------
// CSV

FeatureStats fit_standardizer(const Dataset& d) {
  if (d.rows() == 0) throw ConfigError("cannot fit statistics on an empty dataset");
  FeatureStats st;
  st.mean = d.features.colwise().mean().transpose();
  const Matrix centered = d.features.rowwise() - st.mean.transpose();
  st.stddev = (centered.colwise().squaredNorm() / static_cast<double>(d.rows())).cwiseSqrt().transpose();
  st.stddev = st.stddev.cwiseMax(kStdFloor);
  return st;
}

Dataset standardize(const Dataset& d, const FeatureStats& stats) {
  if (static_cast<std::size_t>(stats.mean.size()) != d.dim()) throw DimensionError("statistics width mismatch");
  Matrix x = (d.features.rowwise() - stats.mean.transpose()).array().rowwise() / stats.stddev.transpose().array();
  return {std::move(x), d.labels};
}

namespace {

std::vector<std::string_view> split_cells(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    std::string_view cell = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) cell.remove_suffix(1);
    cells.push_back(cell);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

bool parse_number(std::string_view cell, double& out) {
  if (cell.empty()) return false;
  if (cell.front() == '+') cell.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out);
  return ec == std::errc() && ptr == cell.data() + cell.size() && std::isfinite(out);
}

}  // namespace

CsvLoad parse_feature_csv(const std::string& text, bool normalize) {
  CsvLoad out;
  std::vector<std::vector<double>> rows;
  std::size_t width = 0;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_cells(line);
    std::vector<double> values(cells.size());
    bool numeric = true;
    std::size_t bad = 0;
    for (std::size_t j = 0; j < cells.size(); ++j) {
      if (!parse_number(cells[j], values[j])) {
        numeric = false;
        bad = j;
        break;
      }
    }
    if (!numeric) {
      if (rows.empty() && !out.had_header) {
        out.had_header = true;
        width = cells.size();
        continue;
      }
      throw ParseError("CSV line " + std::to_string(line_no) + ", column " + std::to_string(bad + 1) +
                           ": non-numeric cell '" + std::string(cells[bad]) + "'",
                       line_no);
    }
    if (width == 0) width = cells.size();
    if (cells.size() != width) {
      throw ParseError("CSV line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                           " cells, expected " + std::to_string(width),
                       line_no);
    }
    if (width < 2) throw ParseError("CSV needs at least one feature column and a label", line_no);
    const double label = values.back();
    if (label != 0.0 && label != 1.0) {
      throw ParseError("CSV line " + std::to_string(line_no) + ": label must be 0 or 1", line_no);
    }
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw ParseError("CSV has no data rows", line_no);

  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto m = static_cast<Eigen::Index>(width - 1);
  Matrix x(n, m);
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < m; ++j) x(i, j) = r[static_cast<std::size_t>(j)];
    y[i] = r.back();
  }
  out.data = Dataset(std::move(x), std::move(y));
  if (normalize) {
    out.stats = fit_standardizer(out.data);
    out.data = standardize(out.data, *out.stats);
  }
  return out;
}

CsvLoad load_feature_csv(const std::filesystem::path& path, bool normalize) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_feature_csv(buf.str(), normalize);
}

void write_feature_csv(const std::filesystem::path& path, const Dataset& d) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < d.features.rows(); ++i) {
    for (Eigen::Index j = 0; j < d.features.cols(); ++j) out << d.features(i, j) << ',';
    out << static_cast<int>(d.labels[i]) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Splits

Split split_dataset(const Dataset& d, const SplitSpec& spec) {
  if (spec.n_train + spec.n_val > d.rows()) {
    throw ConfigError("split needs " + std::to_string(spec.n_train + spec.n_val) + " rows, dataset has " +
                      std::to_string(d.rows()));
  }
  Rng rng(spec.seed);
  std::vector<std::size_t> train_idx, val_idx, rest_idx;
  if (spec.balanced) {
    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < d.rows(); ++i) by_class[d.labels[static_cast<Eigen::Index>(i)] == 1.0].push_back(i);
    for (auto& c : by_class) rng.shuffle(c);
    const std::size_t tr[2] = {(spec.n_train + 1) / 2, spec.n_train / 2};
    const std::size_t va[2] = {(spec.n_val + 1) / 2, spec.n_val / 2};
    for (int c = 0; c < 2; ++c) {
      if (tr[c] + va[c] > by_class[c].size()) {
        throw ConfigError("class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                          " rows, balanced split needs " + std::to_string(tr[c] + va[c]));
      }
      const auto& v = by_class[c];
      train_idx.insert(train_idx.end(), v.begin(), v.begin() + static_cast<std::ptrdiff_t>(tr[c]));
      val_idx.insert(val_idx.end(), v.begin() + static_cast<std::ptrdiff_t>(tr[c]),
                     v.begin() + static_cast<std::ptrdiff_t>(tr[c] + va[c]));
      rest_idx.insert(rest_idx.end(), v.begin() + static_cast<std::ptrdiff_t>(tr[c] + va[c]), v.end());
    }
    rng.shuffle(train_idx);
    rng.shuffle(val_idx);
    rng.shuffle(rest_idx);
  } else {
    std::vector<std::size_t> order(d.rows());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    train_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(spec.n_train));
    val_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(spec.n_train),
                   order.begin() + static_cast<std::ptrdiff_t>(spec.n_train + spec.n_val));
    rest_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(spec.n_train + spec.n_val), order.end());
  }
  return {d.select(train_idx), d.select(val_idx), d.select(rest_idx)};
}

PoisonBatch init_poison(const Dataset& val, std::size_t n_p, std::uint64_t seed, const FeatureBox& box) {
  if (n_p > val.rows()) {
    throw ConfigError("cannot draw " + std::to_string(n_p) + " poison points from " + std::to_string(val.rows()) +
                      " validation rows");
  }
  Rng rng(seed);
  const std::vector<std::size_t> idx = rng.sample_without_replacement(val.rows(), n_p);
  Dataset picked = val.select(idx);
  picked.labels = (1.0 - picked.labels.array()).matrix();
  return {std::move(picked.features), std::move(picked.labels), box};
}

}  // namespace poisonlr
