#include "poisonlr/lr_model.hpp"

#include "poisonlr/errors.hpp"
#include "poisonlr/rng.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace poisonlr {

void SgdConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(eta_tr > 0.0)) throw ConfigError("eta_tr must be positive");
}

namespace {

void gd_step(const Dataset& d, const HyperParams& h, double eta, ModelState& s) {
  const ParamGrad g = grad_w(d, s, h);
  s.weights.noalias() -= eta * g.weights;
  s.bias -= eta * g.bias;
}

void check_gd_args(const Dataset& d, const ModelState& w0, double eta) {
  if (!(eta > 0.0)) throw ConfigError("learning rate must be positive");
  if (d.dim() != w0.dim()) throw DimensionError("initial state does not match the feature count");
  if (!w0.finite()) throw DivergenceError("initial state is not finite", 0);
}

}  // namespace

TrainTrace train_gd_traced(const Dataset& d, const HyperParams& h, const ModelState& w0, double eta,
                           std::size_t steps) {
  check_gd_args(d, w0, eta);
  TrainTrace trace;
  trace.eta = eta;
  trace.lambda_used = h.log_lambda;
  trace.states.reserve(steps + 1);
  trace.states.push_back(w0);
  ModelState s = w0;
  for (std::size_t t = 0; t < steps; ++t) {
    gd_step(d, h, eta, s);
    if (!s.finite()) throw DivergenceError("gradient descent diverged; reduce eta", t + 1);
    trace.states.push_back(s);
  }
  return trace;
}

ModelState train_gd(const Dataset& d, const HyperParams& h, const ModelState& w0, double eta,
                    std::size_t steps) {
  check_gd_args(d, w0, eta);
  ModelState s = w0;
  for (std::size_t t = 0; t < steps; ++t) {
    gd_step(d, h, eta, s);
    if (!s.finite()) throw DivergenceError("gradient descent diverged; reduce eta", t + 1);
  }
  return s;
}

ModelState train_sgd(const Dataset& d, const HyperParams& h, const SgdConfig& cfg) {
  cfg.validate();
  ModelState s = ModelState::zeros(d.dim());
  const std::size_t n = d.rows();
  if (n == 0) return s;

  const double c = h.multiplier(n);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  const auto m = static_cast<Eigen::Index>(d.dim());
  Matrix xb(static_cast<Eigen::Index>(std::min(cfg.batch_size, n)), m);
  Vector yb(xb.rows());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      const auto b = static_cast<Eigen::Index>(end - start);
      for (Eigen::Index k = 0; k < b; ++k) {
        const auto row = static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(k)]);
        xb.row(k) = d.features.row(row);
        yb[k] = d.labels[row];
      }
      const auto xs = xb.topRows(b);
      Vector z = xs * s.weights;
      z.array() += s.bias;
      Vector r = z.unaryExpr([](double t) { return sigmoid(t); }) - yb.head(b);
      const double inv_b = 1.0 / static_cast<double>(b);
      Vector gw = inv_b * (xs.transpose() * r) + c * s.weights;
      double gb = inv_b * r.sum() + (h.penalize_bias ? c * s.bias : 0.0);
      s.weights.noalias() -= cfg.eta_tr * gw;
      s.bias -= cfg.eta_tr * gb;
    }
    if (!s.finite()) throw DivergenceError("SGD diverged; reduce eta_tr", epoch + 1);
  }
  return s;
}

double test_error(const Dataset& d, const ModelState& s) {
  if (d.dim() != s.dim()) throw DimensionError("dataset and model feature counts differ");
  if (d.rows() == 0) throw DimensionError("test_error of an empty dataset");
  Vector z = d.features * s.weights;
  z.array() += s.bias;
  std::size_t wrong = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double predicted = sigmoid(z[i]) >= 0.5 ? 1.0 : 0.0;
    if (predicted != d.labels[i]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(d.rows());
}

double weight_norm_sq(const ModelState& s) { return s.weights.squaredNorm(); }

}  // namespace poisonlr
