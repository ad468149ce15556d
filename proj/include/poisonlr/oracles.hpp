#pragma once

#include "poisonlr/core_math.hpp"
#include "poisonlr/lr_model.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace poisonlr {

/// Regular grid over a 2-D box; cell (iy, ix) sits at
/// (x_lo + ix * (x_hi - x_lo) / (nx - 1), y_lo + iy * (y_hi - y_lo) / (ny - 1)).
struct SpatialGrid {
  Interval x{-9.5, 9.5};
  Interval y{-9.5, 9.5};
  std::size_t nx = 50;
  std::size_t ny = 50;

  double x_at(std::size_t ix) const;
  double y_at(std::size_t iy) const;
};

struct GridSpec {
  std::vector<double> lambda_values;
  SpatialGrid spatial;

  /// Throws ConfigError unless lambda_values is nonempty and strictly increasing.
  void validate() const;
  /// `count` evenly spaced values over [lo, hi] (count >= 1).
  static std::vector<double> linspace(double lo, double hi, std::size_t count);
};

enum class CvCriterion { kZeroOneError, kCrossEntropy };

struct CvOptions {
  std::size_t folds = 5;
  std::uint64_t seed = 0;
  CvCriterion criterion = CvCriterion::kZeroOneError;
  PenaltyScaling scaling = PenaltyScaling::kAbsolute;
};

struct CvResult {
  double best_lambda = 0.0;
  std::vector<double> mean_score;  ///< per grid value, in grid order
};

/// k-fold grid search: seeded shuffle, contiguous folds, SGD on k-1 folds,
/// score on the held-out fold. Ties go to the smallest lambda.
CvResult cross_validate_lambda(const Dataset& train, const GridSpec& grid, const SgdConfig& sgd,
                               const CvOptions& opts);

/// Central differences of (retrain with train_gd, evaluate val loss) with
/// respect to every poison coordinate and to log lambda.
struct FiniteDiffHypergrad {
  Matrix grad_xp;
  double grad_lambda = 0.0;
};
FiniteDiffHypergrad finite_diff_hypergrad(const Dataset& train, const Matrix& poison_features,
                                          const Vector& poison_labels, const Dataset& val, const HyperParams& h,
                                          const ModelState& w0, double eta, std::size_t steps, double step);

/// Trains a model on a (poisoned) dataset for a given hyperparameter.
using Trainer = std::function<ModelState(const Dataset&, const HyperParams&)>;

/// Full-batch GD from zero for `steps` iterations.
Trainer gd_trainer(double eta, std::size_t steps);
/// Mini-batch SGD with the given configuration.
Trainer sgd_trainer(const SgdConfig& cfg);

/// Row-major grid of values, ny rows by nx columns.
struct Surface {
  SpatialGrid grid;
  std::vector<double> values;

  double at(std::size_t iy, std::size_t ix) const { return values[iy * grid.nx + ix]; }
  double spread() const;
};

/// Validation error after adding one poison point (label `poison_label`) at each cell.
Surface error_surface(const Dataset& train, const Dataset& val, const SpatialGrid& grid, double log_lambda,
                      const HyperParams& base, const Trainer& trainer, double poison_label);

struct LambdaSurface {
  Surface best_lambda;
  Surface min_error;
};

/// For each cell: retrain for every lambda in the grid, keep the lambda with the
/// smallest validation error (ties to the smallest lambda). A lambda whose
/// training diverges is skipped; a cell where every lambda diverges is NaN.
LambdaSurface lambda_surface(const Dataset& train, const Dataset& val, const GridSpec& grid,
                             const HyperParams& base, const Trainer& trainer, double poison_label);

/// CSV: a `# key=value ...` metadata line, then ny rows of nx values.
void write_surface_csv(std::ostream& out, const Surface& s, const std::string& quantity);

}  // namespace poisonlr
