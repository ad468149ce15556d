#include <doctest.h>

#include "poisonlr/attack.hpp"
#include "poisonlr/config.hpp"
#include "poisonlr/data_io.hpp"
#include "poisonlr/errors.hpp"
#include "poisonlr/lr_model.hpp"
#include "support/oracle.hpp"

#include <cmath>

using namespace poisonlr;
using namespace testsupport;

namespace {

struct Setup {
  Dataset train, val, test;
  AttackConfig cfg;
  FeatureBox box;
};

// Synthetic preset with small budgets so each attack runs in milliseconds.
Setup small_setup(std::uint64_t seed) {
  Setup s;
  auto [train, val] = gen_synthetic(32, 64, seed);
  s.train = train;
  s.val = val;
  s.test = gen_synthetic(200, 2, seed + 1000).first;
  s.cfg = preset_config("synthetic").attack;
  s.cfg.inner_steps = 100;
  s.cfg.t_dp = 10;
  s.cfg.t_mul = 10;
  s.cfg.t_lambda = 10;
  s.box = FeatureBox::uniform(2, -9.5, 9.5);
  return s;
}

double val_loss_at(const Setup& s, double lambda) {
  return data_loss(s.val, train_gd(s.train, s.cfg.hyper(lambda), ModelState::zeros(2), s.cfg.inner_eta,
                                   s.cfg.inner_steps));
}

}  // namespace

TEST_CASE("project_box") {
  const FeatureBox box = FeatureBox::uniform(2, -9.5, 9.5);
  Matrix inside(2, 2);
  inside << 1, -2, 9.5, -9.5;
  CHECK(project_box(inside, box) == inside);
  Matrix outside(1, 2);
  outside << 10.0, -12.0;
  const Matrix p = project_box(outside, box);
  CHECK(p(0, 0) == 9.5);
  CHECK(p(0, 1) == -9.5);
  CHECK(project_box(p, box) == p);
  CHECK_THROWS_AS(project_box(Matrix::Zero(1, 3), box), DimensionError);
}

TEST_CASE("project_lambda") {
  CHECK(project_lambda(-10.0, {-8.0, std::log(200.0)}) == -8.0);
  CHECK(project_lambda(1.5, {-8.0, std::log(200.0)}) == 1.5);
  CHECK(project_lambda(7.0, {-8.0, std::log(400.0)}) == std::log(400.0));
}

TEST_CASE("AttackConfig validation") {
  AttackConfig c = preset_config("synthetic").attack;
  CHECK_NOTHROW(c.validate());
  CHECK(c.alpha == 0.4);
  CHECK(c.t_dp == 50);
  c.poison_group_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = AttackConfig{};
  c.alpha = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = AttackConfig{};
  c.lambda_range = {2.0, 1.0};
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("null steps leave poison and lambda alone") {
  Setup s = small_setup(1);
  s.cfg.alpha = 0.0;
  s.cfg.beta = 0.0;
  const PoisonBatch p = init_poison(s.val, 3, 5, s.box);
  const AttackReport r = minimax_attack(s.train, s.val, s.test, p, s.cfg);
  CHECK(r.final_poison.features == p.features);
  CHECK(r.final_lambda == s.cfg.lambda_init);
  for (const auto& rec : r.records) CHECK(rec.log_lambda == s.cfg.lambda_init);
}

TEST_CASE("fixed attack with no budget returns the initial poison") {
  Setup s = small_setup(2);
  s.cfg.t_dp = 0;
  const PoisonBatch p = init_poison(s.val, 2, 5, s.box);
  const AttackReport r = fixed_lambda_attack(s.train, s.val, s.test, p, -8.0, s.cfg);
  CHECK(r.final_poison.features == p.features);
  CHECK(r.records.empty());
}

TEST_CASE("single-point attack without regularization hurts validation error") {
  Setup s = small_setup(3);
  s.cfg.t_dp = 50;
  s.cfg.inner_steps = 500;
  const PoisonBatch p = init_poison(s.val, 1, 9, s.box);
  const AttackReport r = fixed_lambda_attack(s.train, s.val, s.test, p, -8.0, s.cfg);
  const double clean = test_error(s.val, train_sgd(s.train, s.cfg.hyper(-8.0), s.cfg.eval));
  CHECK(r.final_val_error > clean);
}

TEST_CASE("minimax with beta = 0 is the fixed-lambda attack") {
  Setup s = small_setup(4);
  s.cfg.beta = 0.0;
  s.cfg.lambda_init = 0.5;
  s.cfg.t_dp = s.cfg.t_mul;
  s.cfg.stage_points = {1, 2};
  const PoisonBatch p = init_poison(s.val, 3, 6, s.box);
  const AttackReport a = minimax_attack(s.train, s.val, s.test, p, s.cfg);
  const AttackReport b = fixed_lambda_attack(s.train, s.val, s.test, p, 0.5, s.cfg);
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t k = 0; k < a.records.size(); ++k) {
    CHECK(a.records[k].val_loss == b.records[k].val_loss);
    CHECK(a.records[k].log_lambda == b.records[k].log_lambda);
  }
  CHECK(a.final_poison.features == b.final_poison.features);
  CHECK(a.final_model.flat() == b.final_model.flat());
  CHECK(a.final_test_error == b.final_test_error);
}

TEST_CASE("projection soundness, label immutability and determinism") {
  Setup s = small_setup(5);
  s.cfg.beta = 5.0;  // large steps so projections are exercised
  s.cfg.alpha = 50.0;
  const PoisonBatch p = init_poison(s.val, 4, 7, s.box);
  const AttackReport r = minimax_attack(s.train, s.val, s.test, p, s.cfg);
  CHECK(r.records.size() == 4 * s.cfg.t_mul);
  for (const auto& rec : r.records) CHECK(s.cfg.lambda_range.contains(rec.log_lambda));
  CHECK(s.box.contains(r.final_poison.features));
  CHECK(r.final_poison.labels == p.labels);
  CHECK(r.rng_algorithm == Rng::kAlgorithm);

  const AttackReport again = minimax_attack(s.train, s.val, s.test, p, s.cfg);
  CHECK(again.final_poison.features == r.final_poison.features);
  CHECK(again.final_lambda == r.final_lambda);
  CHECK(again.final_model.flat() == r.final_model.flat());
}

TEST_CASE("groups are injected in order and kept frozen") {
  Setup s = small_setup(6);
  s.cfg.poison_group_size = 2;
  const PoisonBatch p = init_poison(s.val, 5, 8, s.box);
  const AttackReport full = minimax_attack(s.train, s.val, s.test, p, s.cfg);
  REQUIRE(full.stages.size() == 3);
  CHECK(full.stages[0].n_poison == 2);
  CHECK(full.stages[1].n_poison == 4);
  CHECK(full.stages[2].n_poison == 5);
  for (std::size_t k = 0; k < full.records.size(); ++k) CHECK(full.records[k].group == k / s.cfg.t_mul);

  // The first two groups of a 5-point run equal a standalone 4-point run.
  const AttackReport part = minimax_attack(s.train, s.val, s.test, p.head(4), s.cfg);
  CHECK(full.final_poison.features.topRows(4) == part.final_poison.features);
  CHECK(full.stages[1].log_lambda == part.final_lambda);
}

TEST_CASE("empty poison batch learns lambda only") {
  Setup s = small_setup(7);
  s.cfg.t_mul = 30;
  const PoisonBatch none = init_poison(s.val, 0, 1, s.box);
  const AttackReport r = minimax_attack(s.train, s.val, s.test, none, s.cfg);
  CHECK(r.records.size() == 30);
  CHECK(r.final_poison.size() == 0);
  CHECK(r.final_lambda != s.cfg.lambda_init);
  CHECK(val_loss_at(s, r.final_lambda) < val_loss_at(s, s.cfg.lambda_init));
}

TEST_CASE("learn_lambda_clean") {
  Setup s = small_setup(8);
  s.cfg.t_lambda = 0;
  CHECK(learn_lambda_clean(s.train, s.val, s.cfg) == s.cfg.lambda_init);
  s.cfg.t_lambda = 20;
  s.cfg.beta = 0.0;
  CHECK(learn_lambda_clean(s.train, s.val, s.cfg) == s.cfg.lambda_init);

  Setup full = small_setup(8);
  full.cfg = preset_config("synthetic").attack;
  const double lam = learn_lambda_clean(full.train, full.val, full.cfg);
  CHECK(full.cfg.lambda_range.contains(lam));
  CHECK(val_loss_at(full, lam) <= val_loss_at(full, full.cfg.lambda_range.lo));
  CHECK(val_loss_at(full, lam) <= val_loss_at(full, full.cfg.lambda_range.hi));
}

TEST_CASE("lambda steps respect the per-iteration cap") {
  Setup s = small_setup(9);
  s.cfg.beta = 100.0;
  s.cfg.max_lambda_step = 0.25;
  const PoisonBatch p = init_poison(s.val, 1, 2, s.box);
  const AttackReport r = minimax_attack(s.train, s.val, s.test, p, s.cfg);
  for (std::size_t k = 1; k < r.records.size(); ++k)
    CHECK(std::abs(r.records[k].log_lambda - r.records[k - 1].log_lambda) <= 0.25 + 1e-12);
}

TEST_CASE("alternating mode moves one block per hyperiteration") {
  Setup s = small_setup(10);
  s.cfg.update_mode = UpdateMode::kAlternating;
  const PoisonBatch p = init_poison(s.val, 1, 3, s.box);
  const AttackReport r = minimax_attack(s.train, s.val, s.test, p, s.cfg);
  // lambda only changes after odd hyperiterations.
  for (std::size_t k = 1; k < r.records.size(); k += 2) CHECK(r.records[k].log_lambda == r.records[k - 1].log_lambda);
}

TEST_CASE("stall detection") {
  RestartPolicy on{true, 3, 1e-5};
  CHECK_FALSE(is_stalled({0.1, 0.2, 0.3, 0.4, 0.5}, on, true));
  CHECK(is_stalled({0.1, 0.1, 0.1, 0.1}, on, true));
  CHECK_FALSE(is_stalled({0.5, 0.4, 0.3, 0.2}, on, false));
  CHECK(is_stalled({0.5, 0.4, 0.3, 0.2}, on, true));
  CHECK_FALSE(is_stalled({0.1, 0.1}, on, true));
  RestartPolicy off = on;
  off.enabled = false;
  CHECK_FALSE(is_stalled({0.1, 0.1, 0.1, 0.1}, off, true));
}

TEST_CASE("restart_if_stalled") {
  auto [train, val] = gen_synthetic(8, 12, 3);
  const FeatureBox box = FeatureBox::uniform(2, -9.5, 9.5);
  const Interval range{-8.0, 2.0};
  Rng rng(4);

  StallState st;
  st.group_features = Matrix::Constant(3, 2, 100.0);
  st.group_labels = Vector(3);
  st.group_labels << 0, 1, 0;
  st.log_lambda = 1.8;
  st.history = {0.2, 0.3, 0.4, 0.5};
  const StallContext ctx{val, box, range, RestartPolicy{true, 3, 1e-5}, true, true};

  CHECK_FALSE(restart_if_stalled(st, ctx, rng));
  CHECK(st.restarts == 0);

  st.history = {0.5, 0.5, 0.5, 0.5};
  REQUIRE(restart_if_stalled(st, ctx, rng));
  CHECK(st.restarts == 1);
  CHECK(st.history.empty());
  CHECK(st.log_lambda >= 1.3);
  CHECK(st.log_lambda <= 2.0);
  std::vector<Eigen::Index> rows;
  for (Eigen::Index k = 0; k < 3; ++k) {
    bool found = false;
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(val.rows()); ++i) {
      if (val.features.row(i) == st.group_features.row(k) && val.labels(i) == 1.0 - st.group_labels(k)) {
        found = true;
        rows.push_back(i);
      }
    }
    CHECK(found);
  }
  CHECK(rows.size() == 3);
  CHECK(rows[0] != rows[2]);

  StallState big = st;
  big.group_features = Matrix::Zero(7, 2);
  big.group_labels = Vector::Zero(7);
  big.history = {0.5, 0.5, 0.5, 0.5};
  CHECK_THROWS_AS(restart_if_stalled(big, ctx, rng), ConfigError);
}

TEST_CASE("restarts fire inside a stalled attack") {
  Setup s = small_setup(11);
  s.cfg.alpha = 0.0;  // the objective cannot move, so every window stalls
  s.cfg.beta = 0.0;
  s.cfg.t_dp = 25;
  s.cfg.restart = {true, 10, 1e-5};
  const PoisonBatch p = init_poison(s.val, 1, 3, s.box);
  const AttackReport r = fixed_lambda_attack(s.train, s.val, s.test, p, -8.0, s.cfg);
  CHECK(r.restarts >= 1);
  std::size_t flagged = 0;
  for (const auto& rec : r.records) flagged += rec.restarted ? 1 : 0;
  CHECK(flagged == r.restarts);
}
