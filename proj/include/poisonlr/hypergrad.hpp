#pragma once

#include "poisonlr/core_math.hpp"

namespace poisonlr {

/// Hypergradients of the validation loss after T steps of training.
struct HypergradResult {
  Matrix grad_xp;            ///< n_p x m, d(val loss)/d(poison features)
  double grad_lambda = 0.0;  ///< d(val loss)/d(log lambda)
  double val_loss = 0.0;     ///< unregularized validation loss at w^(T)
  std::size_t trace_len = 0;
  ModelState final_state;    ///< w^(T) of the forward pass
};

/// Poisoned training problem: clean rows followed by poison rows.
struct PoisonedTrainingSet {
  const Dataset& clean;
  const Matrix& poison_features;
  const Vector& poison_labels;

  Dataset merged() const;
  RowRange poison_rows() const {
    return {clean.rows(), static_cast<std::size_t>(poison_features.rows())};
  }
};

/// Reverse-mode differentiation through `steps` full-batch GD iterations on
/// the poisoned training set. The outer objective is data_loss on `val`.
///
/// Forward: w^(t+1) = w^(t) - eta * grad_w(w^(t)), every state kept.
/// Reverse, from dw = grad of val loss at w^(T):
///   dX_p   -= eta * hvp_xp_w(w^(t), dw)
///   dlambda -= eta * hvp_lambda_w(w^(t), dw)
///   dw     -= eta * hvp_ww(w^(t), dw)
/// Throws DivergenceError naming the step if any iterate or adjoint is non-finite.
HypergradResult rmd_hypergrad(const PoisonedTrainingSet& train, const Dataset& val, const HyperParams& h,
                              const ModelState& w0, double eta, std::size_t steps);

}  // namespace poisonlr
