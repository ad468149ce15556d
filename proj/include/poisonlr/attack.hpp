#pragma once

#include "poisonlr/core_math.hpp"
#include "poisonlr/lr_model.hpp"
#include "poisonlr/rng.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace poisonlr {

/// Per-feature closed bounds on poison features.
struct FeatureBox {
  Vector lo;
  Vector hi;

  static FeatureBox uniform(std::size_t dim, double lo, double hi);
  std::size_t dim() const { return static_cast<std::size_t>(lo.size()); }
  void validate() const;
  bool contains(const Matrix& x) const;
};

/// Attacker-controlled rows. Labels are fixed when the batch is built.
struct PoisonBatch {
  Matrix features;
  Vector labels;
  FeatureBox box;

  std::size_t size() const { return static_cast<std::size_t>(features.rows()); }
  /// First k rows, same box.
  PoisonBatch head(std::size_t k) const;
};

Matrix project_box(const Matrix& x, const FeatureBox& box);
double project_lambda(double log_lambda, const Interval& range);

enum class UpdateMode {
  kSimultaneous,  ///< one hypergradient, both blocks updated from it
  kAlternating,   ///< even hyperiterations move X_p, odd ones move lambda
};

/// How raw hypergradients are scaled before the alpha/beta steps.
enum class StepScaling {
  kNone,  ///< x += alpha * grad
  kRows,  ///< both steps multiplied by n = training rows incl. active poison (summed-loss units)
};

struct RestartPolicy {
  bool enabled = false;
  std::size_t window = 10;   ///< hyperiterations compared
  double threshold = 1e-5;   ///< minimum improvement of the outer objective over the window
};

struct AttackConfig {
  double alpha = 0.99;  ///< poison ascent step
  double beta = 0.80;   ///< lambda descent step
  std::size_t t_dp = 100;      ///< hyperiterations per group, lambda fixed
  std::size_t t_lambda = 50;   ///< hyperiterations, clean data, lambda learned
  std::size_t t_mul = 100;     ///< hyperiterations per group, both learned
  double inner_eta = 0.10;
  std::size_t inner_steps = 150;
  Interval lambda_range{-8.0, std::log(200.0)};
  double lambda_init = std::log(5.0);
  PenaltyScaling scaling = PenaltyScaling::kAbsolute;
  bool penalize_bias = false;
  std::size_t poison_group_size = 17;
  /// Poison counts at which a group must end (and a stage is evaluated),
  /// in addition to multiples of poison_group_size.
  std::vector<std::size_t> stage_points;
  RestartPolicy restart;
  UpdateMode update_mode = UpdateMode::kSimultaneous;
  StepScaling step_scaling = StepScaling::kNone;
  /// Cap on |lambda change| per hyperiteration; 0 disables the cap.
  double max_lambda_step = 0.0;
  SgdConfig eval;
  std::uint64_t seed = 0;

  void validate() const;
  HyperParams hyper(double log_lambda) const { return {log_lambda, lambda_range, scaling, penalize_bias}; }
};

/// One outer iteration, evaluated at the point before its update.
struct HyperIterRecord {
  std::size_t group = 0;
  std::size_t n_poison = 0;
  double val_loss = 0.0;
  double log_lambda = 0.0;
  double weight_norm_sq = 0.0;
  bool restarted = false;
};

/// Evaluation after a poison group has been optimized and injected.
struct StageResult {
  std::size_t n_poison = 0;
  double log_lambda = 0.0;
  ModelState model;
  double test_error = 0.0;
  double val_error = 0.0;
  double weight_norm_sq = 0.0;
  std::size_t restarts = 0;  ///< cumulative up to this stage
  double wall_ms = 0.0;      ///< since the attack started
};

struct AttackReport {
  std::vector<HyperIterRecord> records;
  std::vector<StageResult> stages;
  PoisonBatch final_poison;
  double final_lambda = 0.0;
  ModelState final_model;
  double final_test_error = 0.0;
  double final_val_error = 0.0;
  std::size_t restarts = 0;
  double wall_ms = 0.0;
  std::string rng_algorithm{Rng::kAlgorithm};
};

/// Solves min over lambda, max over X_p of the validation loss with projected
/// hypergradient steps. Poison rows are optimized in consecutive groups; earlier
/// groups stay in the training set unchanged. lambda starts at cfg.lambda_init
/// and carries over between groups. An empty batch learns lambda only (t_mul steps).
AttackReport minimax_attack(const Dataset& train, const Dataset& val, const Dataset& test,
                            const PoisonBatch& poison, const AttackConfig& cfg);

/// Poison-only ascent (t_dp steps per group) with lambda frozen at `log_lambda`.
AttackReport fixed_lambda_attack(const Dataset& train, const Dataset& val, const Dataset& test,
                                 const PoisonBatch& poison, double log_lambda, const AttackConfig& cfg);

/// lambda-only descent on clean data for t_lambda steps from cfg.lambda_init.
double learn_lambda_clean(const Dataset& train, const Dataset& val, const AttackConfig& cfg);

/// Mutable state the restart rule inspects and reinitializes.
struct StallState {
  Matrix group_features;  ///< rows currently being optimized
  Vector group_labels;
  double log_lambda = 0.0;
  std::vector<double> history;  ///< outer objective since the last restart
  std::size_t restarts = 0;
};

struct StallContext {
  const Dataset& val;
  const FeatureBox& box;
  Interval lambda_range;
  RestartPolicy policy;
  bool learn_poison = true;
  bool learn_lambda = false;
};

/// True when the outer objective moved by less than policy.threshold (in the
/// learner's favourable direction) over the last policy.window hyperiterations.
bool is_stalled(const std::vector<double>& history, const RestartPolicy& policy, bool maximize);

/// On a stall, redraws the group's features from distinct validation rows whose
/// flipped label equals the poison label, and lambda uniformly in
/// [lambda - 0.5, lambda + 0.5], then projects. Returns whether it restarted.
/// Throws ConfigError when the validation set cannot supply enough rows.
bool restart_if_stalled(StallState& state, const StallContext& ctx, Rng& rng);

}  // namespace poisonlr
