#include "poisonlr/oracles.hpp"

#include "poisonlr/errors.hpp"
#include "poisonlr/rng.hpp"

#include <algorithm>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>

namespace poisonlr {

namespace {

double axis_at(const Interval& iv, std::size_t i, std::size_t count) {
  if (count <= 1) return iv.lo;
  return iv.lo + (iv.hi - iv.lo) * static_cast<double>(i) / static_cast<double>(count - 1);
}

Dataset with_point(const Dataset& train, double x, double y, double label) {
  Matrix p(1, 2);
  p << x, y;
  Vector l(1);
  l << label;
  return train.concat(Dataset(std::move(p), std::move(l)));
}

void require_2d(const Dataset& d) {
  if (d.dim() != 2) throw DimensionError("surfaces need a 2-feature dataset, got " + std::to_string(d.dim()));
}

}  // namespace

double SpatialGrid::x_at(std::size_t ix) const { return axis_at(x, ix, nx); }
double SpatialGrid::y_at(std::size_t iy) const { return axis_at(y, iy, ny); }

void GridSpec::validate() const {
  if (lambda_values.empty()) throw ConfigError("lambda grid is empty");
  for (std::size_t i = 1; i < lambda_values.size(); ++i) {
    if (!(lambda_values[i] > lambda_values[i - 1])) throw ConfigError("lambda grid must be strictly increasing");
  }
}

std::vector<double> GridSpec::linspace(double lo, double hi, std::size_t count) {
  std::vector<double> v(count);
  for (std::size_t i = 0; i < count; ++i) v[i] = axis_at({lo, hi}, i, count);
  return v;
}

CvResult cross_validate_lambda(const Dataset& train, const GridSpec& grid, const SgdConfig& sgd,
                               const CvOptions& opts) {
  grid.validate();
  const std::size_t n = train.rows();
  if (opts.folds < 2) throw ConfigError("cross-validation needs at least 2 folds");
  if (n < opts.folds) throw ConfigError("fewer rows than folds");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(opts.seed);
  rng.shuffle(order);

  std::vector<Dataset> fit_parts, held_parts;
  for (std::size_t f = 0; f < opts.folds; ++f) {
    const std::size_t lo = f * n / opts.folds, hi = (f + 1) * n / opts.folds;
    std::vector<std::size_t> fit, held;
    for (std::size_t i = 0; i < n; ++i) (i >= lo && i < hi ? held : fit).push_back(order[i]);
    fit_parts.push_back(train.select(fit));
    held_parts.push_back(train.select(held));
  }

  CvResult out;
  out.mean_score.reserve(grid.lambda_values.size());
  for (double lambda : grid.lambda_values) {
    const HyperParams h{lambda, {grid.lambda_values.front(), grid.lambda_values.back()}, opts.scaling, false};
    double total = 0.0;
    for (std::size_t f = 0; f < opts.folds; ++f) {
      const ModelState s = train_sgd(fit_parts[f], h, sgd);
      total += opts.criterion == CvCriterion::kZeroOneError ? test_error(held_parts[f], s)
                                                            : data_loss(held_parts[f], s);
    }
    out.mean_score.push_back(total / static_cast<double>(opts.folds));
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < out.mean_score.size(); ++i) {
    if (out.mean_score[i] < out.mean_score[best]) best = i;
  }
  out.best_lambda = grid.lambda_values[best];
  return out;
}

FiniteDiffHypergrad finite_diff_hypergrad(const Dataset& train, const Matrix& poison_features,
                                          const Vector& poison_labels, const Dataset& val, const HyperParams& h,
                                          const ModelState& w0, double eta, std::size_t steps, double step) {
  if (!(step > 0.0)) throw ConfigError("finite-difference step must be positive");
  auto objective = [&](const Matrix& xp, double lambda) {
    const Dataset full = train.concat(Dataset(xp, poison_labels));
    HyperParams hh = h;
    hh.log_lambda = lambda;
    return data_loss(val, train_gd(full, hh, w0, eta, steps));
  };

  FiniteDiffHypergrad out;
  out.grad_xp = Matrix::Zero(poison_features.rows(), poison_features.cols());
  Matrix xp = poison_features;
  for (Eigen::Index i = 0; i < xp.rows(); ++i) {
    for (Eigen::Index j = 0; j < xp.cols(); ++j) {
      const double keep = xp(i, j);
      xp(i, j) = keep + step;
      const double up = objective(xp, h.log_lambda);
      xp(i, j) = keep - step;
      const double down = objective(xp, h.log_lambda);
      xp(i, j) = keep;
      out.grad_xp(i, j) = (up - down) / (2.0 * step);
    }
  }
  out.grad_lambda =
      (objective(xp, h.log_lambda + step) - objective(xp, h.log_lambda - step)) / (2.0 * step);
  return out;
}

Trainer gd_trainer(double eta, std::size_t steps) {
  return [eta, steps](const Dataset& d, const HyperParams& h) {
    return train_gd(d, h, ModelState::zeros(d.dim()), eta, steps);
  };
}

Trainer sgd_trainer(const SgdConfig& cfg) {
  return [cfg](const Dataset& d, const HyperParams& h) { return train_sgd(d, h, cfg); };
}

double Surface::spread() const {
  if (values.empty()) return 0.0;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  return *hi - *lo;
}

Surface error_surface(const Dataset& train, const Dataset& val, const SpatialGrid& grid, double log_lambda,
                      const HyperParams& base, const Trainer& trainer, double poison_label) {
  require_2d(train);
  require_2d(val);
  HyperParams h = base;
  h.log_lambda = log_lambda;
  Surface s{grid, std::vector<double>(grid.nx * grid.ny)};
  for (std::size_t iy = 0; iy < grid.ny; ++iy) {
    for (std::size_t ix = 0; ix < grid.nx; ++ix) {
      const Dataset poisoned = with_point(train, grid.x_at(ix), grid.y_at(iy), poison_label);
      s.values[iy * grid.nx + ix] = test_error(val, trainer(poisoned, h));
    }
  }
  return s;
}

LambdaSurface lambda_surface(const Dataset& train, const Dataset& val, const GridSpec& grid,
                             const HyperParams& base, const Trainer& trainer, double poison_label) {
  require_2d(train);
  require_2d(val);
  grid.validate();
  const SpatialGrid& g = grid.spatial;
  LambdaSurface out{{g, std::vector<double>(g.nx * g.ny)}, {g, std::vector<double>(g.nx * g.ny)}};
  HyperParams h = base;
  for (std::size_t iy = 0; iy < g.ny; ++iy) {
    for (std::size_t ix = 0; ix < g.nx; ++ix) {
      const Dataset poisoned = with_point(train, g.x_at(ix), g.y_at(iy), poison_label);
      double best_err = 2.0, best_lambda = grid.lambda_values.front();
      for (double lambda : grid.lambda_values) {
        h.log_lambda = lambda;
        double err;
        try {
          err = test_error(val, trainer(poisoned, h));
        } catch (const DivergenceError&) {
          continue;  // the trainer cannot fit this lambda; not a candidate
        }
        if (err < best_err) {
          best_err = err;
          best_lambda = lambda;
        }
      }
      const bool any = best_err <= 1.0;
      out.best_lambda.values[iy * g.nx + ix] = any ? best_lambda : std::numeric_limits<double>::quiet_NaN();
      out.min_error.values[iy * g.nx + ix] = any ? best_err : std::numeric_limits<double>::quiet_NaN();
    }
  }
  return out;
}

void write_surface_csv(std::ostream& out, const Surface& s, const std::string& quantity) {
  const SpatialGrid& g = s.grid;
  out << std::setprecision(17);
  out << "# quantity=" << quantity << " x_lo=" << g.x.lo << " x_hi=" << g.x.hi << " y_lo=" << g.y.lo
      << " y_hi=" << g.y.hi << " nx=" << g.nx << " ny=" << g.ny << '\n';
  for (std::size_t iy = 0; iy < g.ny; ++iy) {
    for (std::size_t ix = 0; ix < g.nx; ++ix) {
      if (ix) out << ',';
      out << s.at(iy, ix);
    }
    out << '\n';
  }
}

}  // namespace poisonlr
