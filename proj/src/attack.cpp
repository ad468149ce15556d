#include "poisonlr/attack.hpp"

#include "poisonlr/errors.hpp"
#include "poisonlr/hypergrad.hpp"

#include <algorithm>
#include <chrono>
#include <set>

namespace poisonlr {

FeatureBox FeatureBox::uniform(std::size_t dim, double lo, double hi) {
  const auto m = static_cast<Eigen::Index>(dim);
  return {Vector::Constant(m, lo), Vector::Constant(m, hi)};
}

void FeatureBox::validate() const {
  if (lo.size() != hi.size()) throw DimensionError("box bounds have different lengths");
  if ((lo.array() > hi.array()).any()) throw ConfigError("box has lo > hi for some feature");
}

bool FeatureBox::contains(const Matrix& x) const {
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if ((x.row(i).transpose().array() < lo.array()).any() || (x.row(i).transpose().array() > hi.array()).any()) {
      return false;
    }
  }
  return true;
}

PoisonBatch PoisonBatch::head(std::size_t k) const {
  const auto rows = static_cast<Eigen::Index>(std::min(k, size()));
  return {features.topRows(rows), labels.head(rows), box};
}

Matrix project_box(const Matrix& x, const FeatureBox& box) {
  if (static_cast<std::size_t>(x.cols()) != box.dim()) throw DimensionError("box width does not match features");
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    out.row(i) = x.row(i).transpose().cwiseMax(box.lo).cwiseMin(box.hi).transpose();
  }
  return out;
}

double project_lambda(double log_lambda, const Interval& range) { return range.clamp(log_lambda); }

void AttackConfig::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ConfigError("alpha and beta must be non-negative");
  if (!(max_lambda_step >= 0.0)) throw ConfigError("max_lambda_step must be non-negative");
  if (poison_group_size < 1) throw ConfigError("poison_group_size must be >= 1");
  if (!(inner_eta > 0.0)) throw ConfigError("inner_eta must be positive");
  if (lambda_range.lo > lambda_range.hi) throw ConfigError("lambda range has lo > hi");
  if (restart.window < 1) throw ConfigError("restart window must be >= 1");
  eval.validate();
}

bool is_stalled(const std::vector<double>& history, const RestartPolicy& policy, bool maximize) {
  if (!policy.enabled || history.size() <= policy.window) return false;
  const double now = history.back();
  const double then = history[history.size() - 1 - policy.window];
  const double gain = maximize ? now - then : then - now;
  return gain < policy.threshold;
}

bool restart_if_stalled(StallState& state, const StallContext& ctx, Rng& rng) {
  if (!is_stalled(state.history, ctx.policy, ctx.learn_poison)) return false;

  if (ctx.learn_poison && state.group_features.rows() > 0) {
    // Candidates per target label: validation rows carrying the opposite label.
    std::vector<std::size_t> by_label[2];
    for (std::size_t i = 0; i < ctx.val.rows(); ++i) {
      by_label[ctx.val.labels[static_cast<Eigen::Index>(i)] == 1.0 ? 1 : 0].push_back(i);
    }
    std::size_t need[2] = {0, 0};
    for (Eigen::Index k = 0; k < state.group_labels.size(); ++k) ++need[state.group_labels[k] == 1.0 ? 1 : 0];
    std::vector<std::size_t> drawn[2];
    for (int label = 0; label < 2; ++label) {
      const auto& pool = by_label[1 - label];
      if (need[label] > pool.size()) {
        throw ConfigError("validation set has " + std::to_string(pool.size()) + " rows with label " +
                          std::to_string(1 - label) + ", cannot draw " + std::to_string(need[label]) +
                          " distinct restart points");
      }
      for (std::size_t j : rng.sample_without_replacement(pool.size(), need[label])) drawn[label].push_back(pool[j]);
    }
    std::size_t used[2] = {0, 0};
    for (Eigen::Index k = 0; k < state.group_labels.size(); ++k) {
      const int label = state.group_labels[k] == 1.0 ? 1 : 0;
      state.group_features.row(k) = ctx.val.features.row(static_cast<Eigen::Index>(drawn[label][used[label]++]));
    }
    state.group_features = project_box(state.group_features, ctx.box);
  }
  if (ctx.learn_lambda) {
    state.log_lambda = project_lambda(rng.uniform(state.log_lambda - 0.5, state.log_lambda + 0.5), ctx.lambda_range);
  }
  state.history.clear();
  ++state.restarts;
  return true;
}

namespace {

struct LoopSpec {
  double log_lambda0 = 0.0;
  std::size_t budget = 0;
  bool learn_lambda = false;
  bool evaluate = true;
};

// Group boundaries: multiples of the group size, requested stage points, and n_p.
std::vector<std::size_t> group_ends(std::size_t n_p, const AttackConfig& cfg) {
  std::set<std::size_t> ends;
  for (std::size_t k = cfg.poison_group_size; k < n_p; k += cfg.poison_group_size) ends.insert(k);
  for (std::size_t p : cfg.stage_points) {
    if (p > 0 && p < n_p) ends.insert(p);
  }
  ends.insert(n_p);
  return {ends.begin(), ends.end()};
}

StageResult evaluate_stage(const Dataset& train, const Dataset& val, const Dataset& test, const Matrix& xp,
                           const Vector& yp, double log_lambda, const AttackConfig& cfg) {
  const Dataset poisoned = PoisonedTrainingSet{train, xp, yp}.merged();
  StageResult st;
  st.n_poison = static_cast<std::size_t>(xp.rows());
  st.log_lambda = log_lambda;
  st.model = train_sgd(poisoned, cfg.hyper(log_lambda), cfg.eval);
  st.test_error = test.rows() > 0 ? test_error(test, st.model) : 0.0;
  st.val_error = val.rows() > 0 ? test_error(val, st.model) : 0.0;
  st.weight_norm_sq = weight_norm_sq(st.model);
  return st;
}

AttackReport run_attack(const Dataset& train, const Dataset& val, const Dataset& test, const PoisonBatch& poison,
                        const AttackConfig& cfg, const LoopSpec& spec) {
  cfg.validate();
  train.validate();
  val.validate();
  if (val.dim() != train.dim()) throw DimensionError("validation and training feature counts differ");
  if (poison.size() > 0) {
    if (static_cast<std::size_t>(poison.features.cols()) != train.dim()) {
      throw DimensionError("poison features do not match the training feature count");
    }
    poison.box.validate();
    if (poison.box.dim() != train.dim()) throw DimensionError("poison box does not match the feature count");
  }
  const auto started = std::chrono::steady_clock::now();

  AttackReport report;
  Rng rng(cfg.seed);
  const std::size_t n_p = poison.size();
  Matrix xp = n_p > 0 ? project_box(poison.features, poison.box)
                      : Matrix(0, static_cast<Eigen::Index>(train.dim()));
  const Vector yp = poison.labels;
  double lambda = spec.log_lambda0;
  const ModelState w0 = ModelState::zeros(train.dim());

  const std::vector<std::size_t> ends = n_p > 0 ? group_ends(n_p, cfg) : std::vector<std::size_t>{0};
  std::size_t begin = 0;
  for (std::size_t g = 0; g < ends.size(); ++g) {
    const std::size_t end = ends[g];
    const auto a = static_cast<Eigen::Index>(begin);
    const auto len = static_cast<Eigen::Index>(end - begin);

    StallState stall;
    stall.group_labels = yp.segment(a, len);
    const StallContext ctx{val, poison.box, cfg.lambda_range, cfg.restart, len > 0, spec.learn_lambda};

    for (std::size_t it = 0; it < spec.budget; ++it) {
      const Matrix active = xp.topRows(static_cast<Eigen::Index>(end));
      const Vector active_labels = yp.head(static_cast<Eigen::Index>(end));
      HypergradResult hg;
      try {
        hg = rmd_hypergrad(PoisonedTrainingSet{train, active, active_labels}, val, cfg.hyper(lambda), w0,
                           cfg.inner_eta, cfg.inner_steps);
      } catch (const DivergenceError& e) {
        throw DivergenceError(std::string("hyperiteration ") + std::to_string(report.records.size()) + ": " +
                                  e.what(),
                              e.step());
      }

      HyperIterRecord rec;
      rec.group = g;
      rec.n_poison = end;
      rec.val_loss = hg.val_loss;
      rec.log_lambda = lambda;
      rec.weight_norm_sq = weight_norm_sq(hg.final_state);

      bool move_poison = len > 0;
      bool move_lambda = spec.learn_lambda;
      if (cfg.update_mode == UpdateMode::kAlternating && move_poison && move_lambda) {
        move_poison = it % 2 == 0;
        move_lambda = !move_poison;
      }
      const double scale =
          cfg.step_scaling == StepScaling::kRows ? static_cast<double>(train.rows() + end) : 1.0;
      if (move_poison) {
        xp.middleRows(a, len) =
            project_box(xp.middleRows(a, len) + cfg.alpha * scale * hg.grad_xp.middleRows(a, len),
                                            poison.box);
      }
      if (move_lambda) {
        double step = cfg.beta * scale * hg.grad_lambda;
        if (cfg.max_lambda_step > 0.0) step = std::clamp(step, -cfg.max_lambda_step, cfg.max_lambda_step);
        lambda = project_lambda(lambda - step, cfg.lambda_range);
      }

      if (cfg.restart.enabled) {
        stall.history.push_back(hg.val_loss);
        stall.group_features = xp.middleRows(a, len);
        stall.log_lambda = lambda;
        if (restart_if_stalled(stall, ctx, rng)) {
          xp.middleRows(a, len) = stall.group_features;
          lambda = stall.log_lambda;
          rec.restarted = true;
          ++report.restarts;
        }
      }
      report.records.push_back(rec);
    }
    if (spec.evaluate) {
      StageResult st = evaluate_stage(train, val, test, xp.topRows(static_cast<Eigen::Index>(end)),
                                      yp.head(static_cast<Eigen::Index>(end)), lambda, cfg);
      st.restarts = report.restarts;
      st.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
      report.stages.push_back(std::move(st));
    }
    begin = end;
  }

  report.final_poison = {xp, yp, poison.box};
  report.final_lambda = lambda;
  if (!report.stages.empty()) {
    const StageResult& last = report.stages.back();
    report.final_model = last.model;
    report.final_test_error = last.test_error;
    report.final_val_error = last.val_error;
  }
  report.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  return report;
}

}  // namespace

AttackReport minimax_attack(const Dataset& train, const Dataset& val, const Dataset& test,
                            const PoisonBatch& poison, const AttackConfig& cfg) {
  return run_attack(train, val, test, poison, cfg,
                    {project_lambda(cfg.lambda_init, cfg.lambda_range), cfg.t_mul, cfg.beta > 0.0, true});
}

AttackReport fixed_lambda_attack(const Dataset& train, const Dataset& val, const Dataset& test,
                                 const PoisonBatch& poison, double log_lambda, const AttackConfig& cfg) {
  return run_attack(train, val, test, poison, cfg, {log_lambda, cfg.t_dp, false, true});
}

double learn_lambda_clean(const Dataset& train, const Dataset& val, const AttackConfig& cfg) {
  PoisonBatch none{Matrix(0, static_cast<Eigen::Index>(train.dim())), Vector(0), FeatureBox::uniform(train.dim(), 0, 0)};
  const AttackReport r = run_attack(train, val, Dataset::empty(train.dim()), none, cfg,
                                    {project_lambda(cfg.lambda_init, cfg.lambda_range), cfg.t_lambda,
                                     cfg.beta > 0.0, false});
  return r.final_lambda;
}

}  // namespace poisonlr
