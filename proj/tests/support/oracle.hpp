#pragma once

// Brute-force reference computations used only by tests.

#include "poisonlr/core_math.hpp"
#include "poisonlr/rng.hpp"

#include <cmath>
#include <functional>

namespace testsupport {

using poisonlr::Dataset;
using poisonlr::Matrix;
using poisonlr::ModelState;
using poisonlr::Rng;
using poisonlr::Vector;

inline Dataset random_dataset(std::size_t n, std::size_t m, Rng& rng, double scale = 1.0) {
  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  Vector y(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = scale * rng.normal();
    y(i) = rng.uniform() < 0.5 ? 0.0 : 1.0;
  }
  return {x, y};
}

inline Vector random_vector(std::size_t len, Rng& rng, double scale = 1.0) {
  Vector v(static_cast<Eigen::Index>(len));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = scale * rng.normal();
  return v;
}

inline ModelState random_state(std::size_t m, Rng& rng, double scale = 1.0) {
  return ModelState::from_flat(random_vector(m + 1, rng, scale));
}

/// Central differences of a scalar function of a vector.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double h) {
  Vector g(x.size());
  Vector xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp(i) = x(i) + h;
    const double up = f(xp);
    xp(i) = x(i) - h;
    const double dn = f(xp);
    xp(i) = x(i);
    g(i) = (up - dn) / (2.0 * h);
  }
  return g;
}

/// Central-difference Jacobian of a vector function; column j is d f / d x_j.
inline Matrix fd_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x, double h) {
  const Vector f0 = f(x);
  Matrix j(f0.size(), x.size());
  Vector xp = x;
  for (Eigen::Index c = 0; c < x.size(); ++c) {
    xp(c) = x(c) + h;
    const Vector up = f(xp);
    xp(c) = x(c) - h;
    const Vector dn = f(xp);
    xp(c) = x(c);
    j.col(c) = (up - dn) / (2.0 * h);
  }
  return j;
}

inline double rel_err(const Vector& got, const Vector& want) {
  const double denom = std::max(want.norm(), 1e-300);
  return (got - want).norm() / denom;
}

inline double rel_err(const Matrix& got, const Matrix& want) {
  const double denom = std::max(want.norm(), 1e-300);
  return (got - want).norm() / denom;
}

inline double cosine(const Vector& a, const Vector& b) { return a.dot(b) / (a.norm() * b.norm()); }

/// Row-major flattening, so matrices can be compared as vectors.
inline Vector flatten(const Matrix& m) {
  Vector v(m.size());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) v(i * m.cols() + j) = m(i, j);
  return v;
}

}  // namespace testsupport
