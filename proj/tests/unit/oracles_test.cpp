#include <doctest.h>

#include "poisonlr/data_io.hpp"
#include "poisonlr/errors.hpp"
#include "poisonlr/oracles.hpp"
#include "support/oracle.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <string>

using namespace poisonlr;
using namespace testsupport;

namespace {

// Synthetic problem with 30% of the training labels flipped: noisy enough that
// some regularization beats none.
Dataset noisy_train(std::uint64_t seed) {
  Dataset train = gen_synthetic(20, 2, seed).first;
  Rng r(seed + 50);
  for (Eigen::Index i = 0; i < train.labels.size(); ++i)
    if (r.uniform() < 0.3) train.labels(i) = 1.0 - train.labels(i);
  return train;
}

SpatialGrid coarse(std::size_t n) {
  SpatialGrid g;
  g.nx = n;
  g.ny = n;
  return g;
}

HyperParams per_sample() {
  HyperParams h;
  h.scaling = PenaltyScaling::kPerSample;
  return h;
}

}  // namespace

TEST_CASE("GridSpec") {
  const auto v = GridSpec::linspace(-8.0, 1.0, 10);
  REQUIRE(v.size() == 10);
  CHECK(v.front() == -8.0);
  CHECK(v.back() == 1.0);
  CHECK(v[1] == doctest::Approx(-7.0));
  CHECK(GridSpec::linspace(2.0, 5.0, 1) == std::vector<double>{2.0});
  CHECK_THROWS_AS(GridSpec{}.validate(), ConfigError);
  CHECK_THROWS_AS((GridSpec{{1.0, 1.0}, {}}.validate()), ConfigError);
  SpatialGrid g;
  CHECK(g.x_at(0) == -9.5);
  CHECK(g.x_at(49) == 9.5);
}

TEST_CASE("cross_validate_lambda") {
  const Dataset train = noisy_train(2);
  const SgdConfig sgd{0.2, 32, 100, 0};
  CvOptions opts;
  opts.seed = 2;
  opts.criterion = CvCriterion::kCrossEntropy;

  SUBCASE("single-value grid") {
    GridSpec one{{0.25}, {}};
    CHECK(cross_validate_lambda(train, one, sgd, opts).best_lambda == 0.25);
  }
  SUBCASE("matches an exhaustive per-lambda retrain") {
    GridSpec grid{GridSpec::linspace(-8.0, 1.0, 10), {}};
    const CvResult res = cross_validate_lambda(train, grid, sgd, opts);

    // Independent recomputation: same seeded shuffle, contiguous folds.
    std::vector<std::size_t> order(train.rows());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(opts.seed);
    rng.shuffle(order);
    const std::size_t n = train.rows(), k = opts.folds;
    std::vector<double> scores;
    for (double lam : grid.lambda_values) {
      double total = 0.0;
      for (std::size_t f = 0; f < k; ++f) {
        std::vector<std::size_t> fit, held;
        for (std::size_t i = 0; i < n; ++i) (i >= f * n / k && i < (f + 1) * n / k ? held : fit).push_back(order[i]);
        HyperParams h;
        h.log_lambda = lam;
        total += data_loss(train.select(held), train_sgd(train.select(fit), h, sgd));
      }
      scores.push_back(total / static_cast<double>(k));
    }
    const auto best = static_cast<std::size_t>(std::min_element(scores.begin(), scores.end()) - scores.begin());
    CHECK(res.best_lambda == grid.lambda_values[best]);
    CHECK(best > 0);
    CHECK(best + 1 < grid.lambda_values.size());
    for (std::size_t i = 0; i < scores.size(); ++i) CHECK(res.mean_score[i] == doctest::Approx(scores[i]));
  }
  SUBCASE("deterministic, result in the grid, ties to the smallest lambda") {
    GridSpec grid{{-8.0, -7.9, -7.8}, {}};
    CvOptions zero_one = opts;
    zero_one.criterion = CvCriterion::kZeroOneError;
    const CvResult a = cross_validate_lambda(train, grid, sgd, zero_one);
    const CvResult b = cross_validate_lambda(train, grid, sgd, zero_one);
    CHECK(a.best_lambda == b.best_lambda);
    CHECK(a.mean_score == b.mean_score);
    // Penalties this small do not change any prediction, so all three tie.
    CHECK(a.mean_score[0] == a.mean_score[2]);
    CHECK(a.best_lambda == -8.0);
  }
  SUBCASE("preconditions") {
    GridSpec grid{{0.0}, {}};
    CvOptions bad = opts;
    bad.folds = 1;
    CHECK_THROWS_AS(cross_validate_lambda(train, grid, sgd, bad), ConfigError);
    bad.folds = 50;
    CHECK_THROWS_AS(cross_validate_lambda(train, grid, sgd, bad), ConfigError);
    CHECK_THROWS_AS(cross_validate_lambda(train, GridSpec{}, sgd, opts), ConfigError);
  }
}

TEST_CASE("finite_diff_hypergrad on penalty-only training") {
  Rng rng(13);
  const Dataset val = random_dataset(8, 2, rng);
  HyperParams h;
  h.log_lambda = 0.3;
  const ModelState w0 = random_state(2, rng);
  const double eta = 0.2;
  const std::size_t steps = 15;
  const FiniteDiffHypergrad fd =
      finite_diff_hypergrad(Dataset::empty(2), Matrix(0, 2), Vector(0), val, h, w0, eta, steps, 1e-5);
  const double c = std::exp(h.log_lambda), q = 1.0 - eta * c;
  const ModelState wt{std::pow(q, steps) * w0.weights, w0.bias};
  const Vector outer = grad_w(val, wt, HyperParams{-INFINITY, {-INFINITY, INFINITY}}).weights;
  const double want = outer.dot(steps * std::pow(q, steps - 1) * (-eta * c) * w0.weights);
  CHECK(std::abs(fd.grad_lambda - want) <= 1e-8);
  CHECK_THROWS_AS(finite_diff_hypergrad(Dataset::empty(2), Matrix(0, 2), Vector(0), val, h, w0, eta, steps, 0.0),
                  ConfigError);
}

TEST_CASE("error_surface") {
  auto [train, val] = gen_synthetic(32, 64, 1);
  const Trainer gd = gd_trainer(0.2, 200);
  HyperParams h = per_sample();

  SUBCASE("empty probe grid") {
    const Surface s = error_surface(train, val, coarse(0), -8.0, h, gd, 0.0);
    CHECK(s.values.empty());
    CHECK(s.spread() == 0.0);
  }
  SUBCASE("harmless poison reproduces the clean error") {
    // Label-0 point on the class-0 mean: correct side, far from the boundary.
    SpatialGrid g;
    g.x = {-3.0, -3.0};
    g.y = {0.0, 0.0};
    g.nx = g.ny = 1;
    h.log_lambda = -8.0;
    const double clean = test_error(val, gd(train, h));
    const Surface s = error_surface(train, val, g, -8.0, h, gd, 0.0);
    CHECK(std::abs(s.at(0, 0) - clean) <= 1.0 / static_cast<double>(val.rows()) + 1e-12);
  }
  SUBCASE("cells are independent single-point retrains") {
    const SpatialGrid g = coarse(3);
    const Surface s = error_surface(train, val, g, 0.0, h, gd, 1.0);
    Matrix p(1, 2);
    p << g.x_at(2), g.y_at(1);
    h.log_lambda = 0.0;
    const double direct = test_error(val, gd(train.concat({p, Vector::Ones(1)}), h));
    CHECK(s.at(1, 2) == direct);
  }
  SUBCASE("needs two features") {
    Rng rng(1);
    const Dataset wide = random_dataset(5, 3, rng);
    CHECK_THROWS_AS(error_surface(wide, wide, coarse(2), 0.0, h, gd, 0.0), DimensionError);
  }
}

TEST_CASE("lambda_surface") {
  auto [train, val] = gen_synthetic(32, 64, 2);
  const Trainer gd = gd_trainer(0.2, 200);
  const HyperParams h = per_sample();

  SUBCASE("single lambda gives a constant best-lambda surface") {
    const LambdaSurface s = lambda_surface(train, val, GridSpec{{1.5}, coarse(3)}, h, gd, 0.0);
    for (double v : s.best_lambda.values) CHECK(v == 1.5);
  }
  SUBCASE("harmless cell prefers weak regularization") {
    GridSpec grid{GridSpec::linspace(-8.0, 4.0, 7), {}};
    grid.spatial.x = {-4.0, -4.0};
    grid.spatial.y = {0.0, 0.0};
    grid.spatial.nx = grid.spatial.ny = 1;
    const LambdaSurface s = lambda_surface(train, val, grid, h, gd, 0.0);
    CHECK(s.best_lambda.at(0, 0) <= grid.lambda_values[grid.lambda_values.size() / 2]);
  }
  SUBCASE("appending a lambda folds in cellwise with ties kept earlier") {
    GridSpec grid{{-8.0, -2.0, 1.0}, coarse(4)};
    const LambdaSurface base = lambda_surface(train, val, grid, h, gd, 0.0);
    GridSpec extended = grid;
    extended.lambda_values.push_back(5.0);
    const Surface at5 = error_surface(train, val, grid.spatial, 5.0, h, gd, 0.0);
    const LambdaSurface ext = lambda_surface(train, val, extended, h, gd, 0.0);
    std::size_t unchanged = 0;
    for (std::size_t i = 0; i < at5.values.size(); ++i) {
      const bool better = at5.values[i] < base.min_error.values[i];
      unchanged += better ? 0 : 1;
      CHECK(ext.min_error.values[i] == std::min(at5.values[i], base.min_error.values[i]));
      CHECK(ext.best_lambda.values[i] == (better ? 5.0 : base.best_lambda.values[i]));
    }
    CHECK(unchanged > 0);
  }
  SUBCASE("divergent lambdas are skipped") {
    const Trainer steep = gd_trainer(5.0, 300);
    HyperParams abs;
    const LambdaSurface s = lambda_surface(train, val, GridSpec{{-8.0, 6.0}, coarse(2)}, abs, steep, 0.0);
    for (double v : s.best_lambda.values) CHECK(v == -8.0);
    const LambdaSurface none = lambda_surface(train, val, GridSpec{{6.0}, coarse(1)}, abs, steep, 0.0);
    CHECK(std::isnan(none.best_lambda.values[0]));
  }
}

TEST_CASE("surface CSV layout") {
  Surface s{coarse(2), {0.1, 0.2, 0.3, 0.4}};
  std::ostringstream out;
  write_surface_csv(out, s, "val_error");
  std::istringstream in(out.str());
  std::string header, row1, row2, extra;
  std::getline(in, header);
  std::getline(in, row1);
  std::getline(in, row2);
  CHECK(header.rfind("# quantity=val_error", 0) == 0);
  CHECK(header.find("nx=2") != std::string::npos);
  CHECK(header.find("x_lo=-9.5") != std::string::npos);
  // Values are written at round-trip precision.
  CHECK(std::stod(row1.substr(0, row1.find(','))) == 0.1);
  CHECK(std::stod(row1.substr(row1.find(',') + 1)) == 0.2);
  CHECK(std::stod(row2.substr(row2.find(',') + 1)) == 0.4);
  CHECK_FALSE(std::getline(in, extra));
}

TEST_CASE("trainers") {
  auto [train, val] = gen_synthetic(32, 2, 4);
  HyperParams h;
  CHECK(gd_trainer(0.2, 100)(train, h).flat() == train_gd(train, h, ModelState::zeros(2), 0.2, 100).flat());
  const SgdConfig cfg{0.1, 8, 3, 5};
  CHECK(sgd_trainer(cfg)(train, h).flat() == train_sgd(train, h, cfg).flat());
}
