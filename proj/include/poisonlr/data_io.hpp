#pragma once

#include "poisonlr/attack.hpp"
#include "poisonlr/core_math.hpp"
#include "poisonlr/errors.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace poisonlr {

// ---------------------------------------------------------------------------
// Synthetic two-Gaussian problem

/// Class 0 ~ N((-3, 0), diag(2.5, 1.5)), class 1 ~ N((3, 0), diag(2.5, 1.5)).
struct GaussianClasses {
  double mean0[2] = {-3.0, 0.0};
  double mean1[2] = {3.0, 0.0};
  double var[2] = {2.5, 1.5};
};

/// `n` points, half per class (class 0 first), drawn from `rng`.
Dataset sample_gaussian_classes(std::size_t n, Rng& rng, const GaussianClasses& g = {});

/// Training and validation sets; both counts must be even.
std::pair<Dataset, Dataset> gen_synthetic(std::size_t n_train, std::size_t n_val, std::uint64_t seed);

// ---------------------------------------------------------------------------
// IDX (big-endian magic + dims + payload)

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

class IdxError : public ParseError {
 public:
  enum class Kind { kBadMagic, kTruncated, kCountMismatch, kIo };
  IdxError(Kind kind, const std::string& what, std::size_t offset) : ParseError(what, offset), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct IdxImages {
  std::uint32_t count = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> pixels;  ///< count * rows * cols, row-major
};

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_idx_images(const IdxImages& images);
std::vector<std::uint8_t> encode_idx_labels(const std::vector<std::uint8_t>& labels);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// Keeps images of digits class_a (label 0) and class_b (label 1), pixels / 255.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 int class_a, int class_b);

// ---------------------------------------------------------------------------
// CSV features: numeric columns, last column is the 0/1 label.

struct FeatureStats {
  Vector mean;
  Vector stddev;  ///< floored at kStdFloor
};

inline constexpr double kStdFloor = 1e-12;

FeatureStats fit_standardizer(const Dataset& d);
Dataset standardize(const Dataset& d, const FeatureStats& stats);

struct CsvLoad {
  Dataset data;
  std::optional<FeatureStats> stats;
  bool had_header = false;
};

/// Parses a rectangular CSV. A first row with any non-numeric cell is a header.
/// With `normalize`, features are standardized by their own statistics, which
/// are returned so the same transform can be applied to other splits.
CsvLoad load_feature_csv(const std::filesystem::path& path, bool normalize);
CsvLoad parse_feature_csv(const std::string& text, bool normalize);
void write_feature_csv(const std::filesystem::path& path, const Dataset& d);

// ---------------------------------------------------------------------------
// Splits and poison initialization

struct SplitSpec {
  std::size_t n_train = 512;
  std::size_t n_val = 171;
  std::uint64_t seed = 0;
  bool balanced = true;
};

struct Split {
  Dataset train;
  Dataset val;
  Dataset remainder;
};

/// Seeded shuffle, then train/val partition. Balanced parts give class 0 the
/// larger half of an odd count.
Split split_dataset(const Dataset& d, const SplitSpec& spec);

/// n_p distinct validation rows, labels flipped, features copied.
PoisonBatch init_poison(const Dataset& val, std::size_t n_p, std::uint64_t seed, const FeatureBox& box);

}  // namespace poisonlr
