#include "poisonlr/hypergrad.hpp"

#include "poisonlr/errors.hpp"
#include "poisonlr/lr_model.hpp"

#include <cmath>
#include <limits>

namespace poisonlr {

Dataset PoisonedTrainingSet::merged() const {
  if (static_cast<std::size_t>(poison_features.cols()) != clean.dim() && poison_features.rows() > 0) {
    throw DimensionError("poison features do not match the training feature count");
  }
  if (poison_labels.size() != poison_features.rows()) {
    throw DimensionError("poison label count does not match poison rows");
  }
  Matrix xp = poison_features;
  if (xp.rows() == 0) xp.resize(0, static_cast<Eigen::Index>(clean.dim()));
  return clean.concat(Dataset(std::move(xp), poison_labels));
}

HypergradResult rmd_hypergrad(const PoisonedTrainingSet& train, const Dataset& val, const HyperParams& h,
                              const ModelState& w0, double eta, std::size_t steps) {
  const Dataset full = train.merged();
  if (val.dim() != full.dim()) throw DimensionError("validation and training feature counts differ");
  const RowRange poison = train.poison_rows();
  const TrainTrace trace = train_gd_traced(full, h, w0, eta, steps);

  HypergradResult out;
  out.trace_len = steps;
  out.final_state = trace.final_state();
  out.val_loss = data_loss(val, out.final_state);
  out.grad_xp = Matrix::Zero(static_cast<Eigen::Index>(poison.count), static_cast<Eigen::Index>(full.dim()));

  // Outer objective carries no penalty, so its gradient is the data part only.
  const HyperParams no_penalty{-std::numeric_limits<double>::infinity(), h.range, h.scaling, false};
  Vector dw = grad_w(val, out.final_state, no_penalty).flat();
  double dlambda = 0.0;
  const std::size_t n = full.rows();

  for (std::size_t t = steps; t-- > 0;) {
    const ModelState& w = trace.states[t];
    if (poison.count > 0) out.grad_xp.noalias() -= eta * hvp_xp_w(full, poison, w, dw);
    dlambda -= eta * hvp_lambda_w(w, h, dw, n);
    dw.noalias() -= eta * hvp_ww(full, w, h, dw);
    if (!dw.allFinite() || !std::isfinite(dlambda)) {
      throw DivergenceError("reverse sweep produced a non-finite adjoint", t);
    }
  }
  if (!out.grad_xp.allFinite()) throw DivergenceError("non-finite poison hypergradient", 0);
  out.grad_lambda = dlambda;
  return out;
}

}  // namespace poisonlr
