#include "poisonlr/core_math.hpp"

#include "poisonlr/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace poisonlr {

namespace {

void check_dims(const Dataset& d, const ModelState& s) {
  if (d.dim() != s.dim()) {
    throw DimensionError("dataset has " + std::to_string(d.dim()) + " features, model has " +
                         std::to_string(s.dim()) + " weights");
  }
  if (static_cast<std::size_t>(d.labels.size()) != d.rows()) {
    throw DimensionError("label count does not match row count");
  }
}

void check_flat(const ModelState& s, const Vector& v) {
  if (static_cast<std::size_t>(v.size()) != s.dim() + 1) {
    throw DimensionError("direction has length " + std::to_string(v.size()) + ", expected " +
                         std::to_string(s.dim() + 1));
  }
}

// sigmoid(X w + b), elementwise.
Vector probabilities(const Dataset& d, const ModelState& s) {
  Vector z = d.features * s.weights;
  z.array() += s.bias;
  return z.unaryExpr([](double t) { return sigmoid(t); });
}

}  // namespace

Dataset Dataset::empty(std::size_t dim) {
  return Dataset(Matrix(0, static_cast<Eigen::Index>(dim)), Vector(0));
}

void Dataset::validate() const {
  if (static_cast<std::size_t>(labels.size()) != rows()) {
    throw DimensionError("dataset has " + std::to_string(rows()) + " rows but " +
                         std::to_string(labels.size()) + " labels");
  }
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0.0 && labels[i] != 1.0) {
      throw ConfigError("label at row " + std::to_string(i) + " is not 0 or 1");
    }
  }
  if (!features.allFinite()) throw ConfigError("dataset contains non-finite features");
}

Dataset Dataset::concat(const Dataset& tail) const {
  if (tail.dim() != dim()) throw DimensionError("cannot concatenate datasets of different width");
  Matrix x(features.rows() + tail.features.rows(), features.cols());
  x << features, tail.features;
  Vector y(labels.size() + tail.labels.size());
  y << labels, tail.labels;
  return Dataset(std::move(x), std::move(y));
}

Dataset Dataset::select(const std::vector<std::size_t>& idx) const {
  Matrix x(static_cast<Eigen::Index>(idx.size()), features.cols());
  Vector y(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= rows()) throw DimensionError("row index " + std::to_string(idx[k]) + " out of range");
    x.row(static_cast<Eigen::Index>(k)) = features.row(static_cast<Eigen::Index>(idx[k]));
    y[static_cast<Eigen::Index>(k)] = labels[static_cast<Eigen::Index>(idx[k])];
  }
  return Dataset(std::move(x), std::move(y));
}

bool ModelState::finite() const { return weights.allFinite() && std::isfinite(bias); }

Vector ModelState::flat() const {
  Vector v(weights.size() + 1);
  v << weights, bias;
  return v;
}

ModelState ModelState::from_flat(const Vector& v) {
  return {v.head(v.size() - 1), v[v.size() - 1]};
}

Vector ParamGrad::flat() const {
  Vector v(weights.size() + 1);
  v << weights, bias;
  return v;
}

double HyperParams::multiplier(std::size_t n_rows) const {
  const double c = std::exp(log_lambda);
  if (scaling == PenaltyScaling::kPerSample) {
    return n_rows == 0 ? c : c / static_cast<double>(n_rows);
  }
  return c;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double data_loss(const Dataset& d, const ModelState& s) {
  check_dims(d, s);
  if (d.rows() == 0) throw DimensionError("data_loss of an empty dataset");
  const Vector p = probabilities(d, s);
  double total = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], kProbClamp, 1.0 - kProbClamp);
    total -= d.labels[i] == 1.0 ? std::log(q) : std::log(1.0 - q);
  }
  return total / static_cast<double>(d.rows());
}

double penalty(const ModelState& s, const HyperParams& h, std::size_t n_rows) {
  double sq = s.weights.squaredNorm();
  if (h.penalize_bias) sq += s.bias * s.bias;
  return 0.5 * h.multiplier(n_rows) * sq;
}

double regularized_loss(const Dataset& d, const ModelState& s, const HyperParams& h) {
  return data_loss(d, s) + penalty(s, h, d.rows());
}

ParamGrad grad_w(const Dataset& d, const ModelState& s, const HyperParams& h) {
  check_dims(d, s);
  const double c = h.multiplier(d.rows());
  ParamGrad g{c * s.weights, h.penalize_bias ? c * s.bias : 0.0};
  if (d.rows() == 0) return g;
  const Vector r = probabilities(d, s) - d.labels;
  const double inv_n = 1.0 / static_cast<double>(d.rows());
  g.weights.noalias() += inv_n * (d.features.transpose() * r);
  g.bias += inv_n * r.sum();
  return g;
}

Vector hvp_ww(const Dataset& d, const ModelState& s, const HyperParams& h, const Vector& v) {
  check_dims(d, s);
  check_flat(s, v);
  const Eigen::Index m = static_cast<Eigen::Index>(s.dim());
  const double c = h.multiplier(d.rows());
  Vector out(m + 1);
  out.head(m) = c * v.head(m);
  out[m] = h.penalize_bias ? c * v[m] : 0.0;
  if (d.rows() == 0) return out;

  const Vector p = probabilities(d, s);
  Vector u = d.features * v.head(m);
  u.array() += v[m];
  u.array() *= (p.array() * (1.0 - p.array()));
  const double inv_n = 1.0 / static_cast<double>(d.rows());
  out.head(m).noalias() += inv_n * (d.features.transpose() * u);
  out[m] += inv_n * u.sum();
  return out;
}

Matrix hvp_xp_w(const Dataset& full_train, RowRange poison, const ModelState& s, const Vector& v) {
  check_dims(full_train, s);
  check_flat(s, v);
  if (poison.offset + poison.count > full_train.rows()) {
    throw DimensionError("poison rows [" + std::to_string(poison.offset) + ", " +
                         std::to_string(poison.offset + poison.count) + ") exceed " +
                         std::to_string(full_train.rows()) + " training rows");
  }
  const Eigen::Index m = static_cast<Eigen::Index>(s.dim());
  const Eigen::Index np = static_cast<Eigen::Index>(poison.count);
  Matrix out(np, m);
  if (np == 0) return out;

  // For row k: d/dx_k [ (p_k - y_k)(x_k^T v_w + v_b) ] / n
  //   = (s'_k (x_k^T v_w + v_b) w + (p_k - y_k) v_w) / n
  const auto rows = full_train.features.middleRows(static_cast<Eigen::Index>(poison.offset), np);
  const auto labels = full_train.labels.segment(static_cast<Eigen::Index>(poison.offset), np);
  Vector z = rows * s.weights;
  z.array() += s.bias;
  Vector proj = rows * v.head(m);
  proj.array() += v[m];
  const double inv_n = 1.0 / static_cast<double>(full_train.rows());
  for (Eigen::Index k = 0; k < np; ++k) {
    const double p = sigmoid(z[k]);
    const double a = p * (1.0 - p) * proj[k];
    const double r = p - labels[k];
    out.row(k) = inv_n * (a * s.weights + r * v.head(m)).transpose();
  }
  return out;
}

double hvp_lambda_w(const ModelState& s, const HyperParams& h, const Vector& v, std::size_t n_rows) {
  check_flat(s, v);
  const Eigen::Index m = static_cast<Eigen::Index>(s.dim());
  const double c = h.multiplier(n_rows);
  double out = c * s.weights.dot(v.head(m));
  if (h.penalize_bias) out += c * s.bias * v[m];
  return out;
}

}  // namespace poisonlr
