#pragma once

#include "poisonlr/config.hpp"
#include "poisonlr/core_math.hpp"
#include "poisonlr/oracles.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace poisonlr {

/// Data for one repetition: train/val drawn from the pool with a per-repetition
/// seed, test fixed across repetitions.
struct ExperimentData {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Loads the configured pool/test files once; hands out reseeded splits.
class DataProvider {
 public:
  explicit DataProvider(const ExperimentConfig& cfg);
  ExperimentData repetition(std::size_t rep) const;

 private:
  ExperimentConfig cfg_;
  Dataset pool_;
  Dataset test_;
};

/// Independent streams for one repetition, all derived from experiment.seed.
struct RepetitionSeeds {
  std::uint64_t base = 0;
  std::uint64_t split = 0;
  std::uint64_t poison = 0;
  std::uint64_t attack = 0;
  std::uint64_t eval = 0;
  std::uint64_t cv = 0;
};
RepetitionSeeds repetition_seeds(std::uint64_t experiment_seed, std::size_t rep);

struct ResultRow {
  AttackMode mode = AttackMode::kFixedSmall;
  double fraction = 0.0;
  std::size_t repetition = 0;
  std::uint64_t seed = 0;
  std::size_t n_poison = 0;
  bool ok = true;
  std::string error;
  double test_error = 0.0;
  double lambda_final = 0.0;
  double weight_norm_sq = 0.0;
  std::size_t restarts = 0;
  double wall_ms = 0.0;
  ModelState model;
};

struct SummaryRow {
  AttackMode mode = AttackMode::kFixedSmall;
  double fraction = 0.0;
  std::size_t count = 0;
  double mean_test_error = 0.0, std_test_error = 0.0;
  double mean_lambda = 0.0, std_lambda = 0.0;
  double mean_weight_norm_sq = 0.0, std_weight_norm_sq = 0.0;
};

struct ExperimentResult {
  std::vector<ResultRow> rows;  ///< ordered by (mode, repetition, fraction) as configured
  std::vector<SummaryRow> summary;
  bool any_failed = false;
};

/// Poison count for a fraction of n_train (rounded to nearest).
std::size_t poison_count(double fraction, std::size_t n_train);

/// Runs every (repetition x mode) cell, each covering all fractions through the
/// incremental poison schedule. Cells run on cfg.jobs threads; results land in
/// preallocated slots so output order never depends on scheduling.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Mean and sample standard deviation per (mode, fraction) over successful rows.
std::vector<SummaryRow> summarize(const ExperimentConfig& cfg, const std::vector<ResultRow>& rows);

void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows);
void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows);
void write_timing_csv(std::ostream& out, const std::vector<ResultRow>& rows);

/// Writes results.csv, summary.csv, timing.csv, hist_*.csv and the config copies into `dir`.
void write_experiment_outputs(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                              const ExperimentResult& result, const std::optional<std::string>& config_text);

struct Histogram {
  std::vector<double> edges;      ///< bins + 1
  std::vector<double> frequency;  ///< relative, sums to 1
};

/// Relative-frequency histogram of the weights over [min w, max w]
/// (a unit-wide range centred on the value when all weights are equal).
Histogram emit_histogram(const ModelState& s, std::size_t bins);
void write_histogram_csv(std::ostream& out, const Histogram& h);

struct SurfaceSet {
  Surface error_unreg;
  Surface error_reg;
  LambdaSurface lambda;
};

/// Error surfaces at surface.lambda_unreg and surface.lambda_reg and the
/// best-lambda surface over [grid_lo, grid_hi]; synthetic data only.
SurfaceSet emit_surfaces(const ExperimentConfig& cfg);
void write_surface_outputs(const std::filesystem::path& dir, const SurfaceSet& s);

/// lambda_CLEAN for one repetition.
CvResult run_cv(const ExperimentConfig& cfg, std::size_t rep);

/// Oracle verification on small random instances; prints one line per check.
bool run_checks(std::ostream& out, std::uint64_t seed);

}  // namespace poisonlr
