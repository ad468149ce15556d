#pragma once

#include "poisonlr/core_math.hpp"

#include <cstdint>
#include <vector>

namespace poisonlr {

/// Every iterate of a full-batch gradient-descent run, w^(0) ... w^(T).
struct TrainTrace {
  std::vector<ModelState> states;
  double eta = 0.0;
  double lambda_used = 0.0;

  std::size_t steps() const { return states.empty() ? 0 : states.size() - 1; }
  const ModelState& final_state() const { return states.back(); }
};

/// Mini-batch SGD settings used when a poisoned model is evaluated.
struct SgdConfig {
  double eta_tr = 1e-2;
  std::size_t batch_size = 64;
  std::size_t epochs = 200;
  std::uint64_t seed = 0;

  void validate() const;
};

/// T full-batch steps w <- w - eta * grad_w(w), storing each state.
/// Throws DivergenceError naming the first step whose state is non-finite.
TrainTrace train_gd_traced(const Dataset& d, const HyperParams& h, const ModelState& w0, double eta,
                           std::size_t steps);

/// Final state of train_gd_traced without keeping the trace.
ModelState train_gd(const Dataset& d, const HyperParams& h, const ModelState& w0, double eta,
                    std::size_t steps);

/// Shuffled mini-batch SGD from zero. Batch gradients are the mean over the
/// batch plus the penalty gradient computed with the full training-set size.
ModelState train_sgd(const Dataset& d, const HyperParams& h, const SgdConfig& cfg);

/// Fraction of rows whose prediction (sigmoid >= 0.5; ties predict 1) differs from the label.
double test_error(const Dataset& d, const ModelState& s);

/// |w|^2, bias excluded.
double weight_norm_sq(const ModelState& s);

}  // namespace poisonlr
