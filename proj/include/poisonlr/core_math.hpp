#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace poisonlr {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] inside log().
inline constexpr double kProbClamp = 1e-12;

/// Closed interval.
struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double x) const { return x >= lo && x <= hi; }
  double clamp(double x) const { return x < lo ? lo : (x > hi ? hi : x); }
};

/// Feature matrix (n x m) with binary labels in {0, 1}.
struct Dataset {
  Matrix features;
  Vector labels;

  Dataset() = default;
  Dataset(Matrix x, Vector y) : features(std::move(x)), labels(std::move(y)) {}

  /// Empty dataset with a fixed feature count.
  static Dataset empty(std::size_t dim);

  std::size_t rows() const { return static_cast<std::size_t>(features.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }

  /// Throws DimensionError/ConfigError when labels are not 0/1, lengths
  /// disagree, or any feature is non-finite.
  void validate() const;

  /// Rows of `this` followed by rows of `tail`.
  Dataset concat(const Dataset& tail) const;

  /// Subset by row index, in the given order.
  Dataset select(const std::vector<std::size_t>& idx) const;
};

/// Logistic-regression parameters: one weight per feature plus a bias.
struct ModelState {
  Vector weights;
  double bias = 0.0;

  static ModelState zeros(std::size_t dim) { return {Vector::Zero(static_cast<Eigen::Index>(dim)), 0.0}; }
  std::size_t dim() const { return static_cast<std::size_t>(weights.size()); }
  bool finite() const;

  /// (weights, bias) as one vector of length m + 1.
  Vector flat() const;
  static ModelState from_flat(const Vector& v);
};

/// How the L2 multiplier relates to the training-set size.
enum class PenaltyScaling {
  kAbsolute,   ///< penalty = e^lambda / 2 * |w|^2
  kPerSample,  ///< penalty = e^lambda / (2 n) * |w|^2, i.e. summed loss / n
};

/// Log-space regularization strength with its feasible interval.
struct HyperParams {
  double log_lambda = 0.0;
  Interval range{-8.0, 6.0};
  PenaltyScaling scaling = PenaltyScaling::kAbsolute;
  bool penalize_bias = false;

  /// Coefficient c such that the penalty is c/2 * |w|^2 on n training rows.
  double multiplier(std::size_t n_rows) const;
};

/// Gradient of the regularized loss split into its weight and bias parts.
struct ParamGrad {
  Vector weights;
  double bias = 0.0;

  Vector flat() const;
};

/// Contiguous block of rows inside a training matrix.
struct RowRange {
  std::size_t offset = 0;
  std::size_t count = 0;
};

double sigmoid(double z);

/// Mean binary cross-entropy. Requires d.rows() >= 1.
double data_loss(const Dataset& d, const ModelState& s);

/// data_loss plus the L2 penalty on the weights.
double regularized_loss(const Dataset& d, const ModelState& s, const HyperParams& h);

/// Penalty term alone, for n training rows.
double penalty(const ModelState& s, const HyperParams& h, std::size_t n_rows);

/// Exact gradient of regularized_loss. An empty dataset contributes no data term.
ParamGrad grad_w(const Dataset& d, const ModelState& s, const HyperParams& h);

/// Hessian of regularized_loss times v (length m + 1), never forming the Hessian.
Vector hvp_ww(const Dataset& d, const ModelState& s, const HyperParams& h, const Vector& v);

/// (d/dX_p grad_w)^T v for the rows `poison` of `full_train`; result is n_p x m.
/// The penalty does not depend on X_p, so no hyperparameter enters.
Matrix hvp_xp_w(const Dataset& full_train, RowRange poison, const ModelState& s, const Vector& v);

/// (d/dlambda grad_w)^T v = c * w^T v_w (plus c * b * v_b if the bias is penalized).
double hvp_lambda_w(const ModelState& s, const HyperParams& h, const Vector& v, std::size_t n_rows);

}  // namespace poisonlr
