#include "poisonlr/experiment.hpp"

#include "poisonlr/attack.hpp"
#include "poisonlr/data_io.hpp"
#include "poisonlr/errors.hpp"
#include "poisonlr/hypergrad.hpp"
#include "poisonlr/rng.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

namespace poisonlr {

RepetitionSeeds repetition_seeds(std::uint64_t experiment_seed, std::size_t rep) {
  RepetitionSeeds s;
  s.base = derive_seed(experiment_seed, rep);
  s.split = derive_seed(s.base, 0);
  s.poison = derive_seed(s.base, 1);
  s.attack = derive_seed(s.base, 2);
  s.eval = derive_seed(s.base, 3);
  s.cv = derive_seed(s.base, 4);
  return s;
}

DataProvider::DataProvider(const ExperimentConfig& cfg) : cfg_(cfg) {
  switch (cfg.data.source) {
    case DataSource::kSynthetic: {
      Rng rng(derive_seed(cfg.seed, 0xfeedULL));
      test_ = sample_gaussian_classes(cfg.data.n_test, rng);
      break;
    }
    case DataSource::kIdx:
      pool_ = load_idx(cfg.data.pool_images, cfg.data.pool_labels, cfg.data.class_a, cfg.data.class_b);
      test_ = load_idx(cfg.data.test_images, cfg.data.test_labels, cfg.data.class_a, cfg.data.class_b);
      break;
    case DataSource::kCsv:
      pool_ = load_feature_csv(cfg.data.pool_csv, false).data;
      test_ = load_feature_csv(cfg.data.test_csv, false).data;
      if (test_.dim() != pool_.dim()) throw DimensionError("test CSV width differs from the pool CSV");
      break;
  }
}

ExperimentData DataProvider::repetition(std::size_t rep) const {
  const RepetitionSeeds seeds = repetition_seeds(cfg_.seed, rep);
  if (cfg_.data.source == DataSource::kSynthetic) {
    auto [train, val] = gen_synthetic(cfg_.data.n_train, cfg_.data.n_val, seeds.split);
    return {std::move(train), std::move(val), test_};
  }
  Split split = split_dataset(pool_, {cfg_.data.n_train, cfg_.data.n_val, seeds.split, cfg_.data.balanced});
  if (cfg_.data.normalize) {
    const FeatureStats stats = fit_standardizer(split.train);
    return {standardize(split.train, stats), standardize(split.val, stats), standardize(test_, stats)};
  }
  return {std::move(split.train), std::move(split.val), test_};
}

std::size_t poison_count(double fraction, std::size_t n_train) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n_train)));
}

namespace {

struct CellOutcome {
  std::vector<StageResult> stages;  // one per distinct poison count, ascending
  std::vector<std::size_t> restarts;
  std::vector<double> wall_ms;
};

AttackConfig attack_config_for(const ExperimentConfig& cfg, const RepetitionSeeds& seeds,
                               const std::vector<std::size_t>& counts) {
  AttackConfig a = cfg.attack;
  a.seed = seeds.attack;
  a.eval.seed = seeds.eval;
  a.stage_points = counts;
  return a;
}

double lambda_for_fixed_mode(const ExperimentConfig& cfg, AttackMode mode, const ExperimentData& data,
                             const RepetitionSeeds& seeds) {
  switch (mode) {
    case AttackMode::kFixedSmall: return cfg.lambda_small;
    case AttackMode::kFixedLarge: return cfg.lambda_large;
    case AttackMode::kCvClean: {
      GridSpec grid{GridSpec::linspace(cfg.cv.lambda_lo, cfg.cv.lambda_hi, cfg.cv.lambda_count), {}};
      SgdConfig sgd = cfg.attack.eval;
      sgd.seed = seeds.eval;
      return cross_validate_lambda(data.train, grid, sgd, {cfg.cv.folds, seeds.cv, cfg.cv.criterion, cfg.attack.scaling})
          .best_lambda;
    }
    case AttackMode::kRmdMinimax: break;
  }
  throw ConfigError("mode has no fixed lambda");
}

CellOutcome run_cell(const ExperimentConfig& cfg, AttackMode mode, const ExperimentData& data,
                     const RepetitionSeeds& seeds, const std::vector<std::size_t>& counts) {
  const auto started = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  };
  const std::size_t max_np = counts.empty() ? 0 : counts.back();
  AttackConfig acfg = attack_config_for(cfg, seeds, counts);
  CellOutcome out;

  double lambda0 = 0.0;
  if (mode == AttackMode::kRmdMinimax) {
    lambda0 = learn_lambda_clean(data.train, data.val, acfg);
  } else {
    lambda0 = lambda_for_fixed_mode(cfg, mode, data, seeds);
  }

  if (counts.front() == 0) {
    StageResult clean;
    clean.n_poison = 0;
    clean.log_lambda = lambda0;
    clean.model = train_sgd(data.train, acfg.hyper(lambda0), acfg.eval);
    clean.test_error = test_error(data.test, clean.model);
    clean.val_error = test_error(data.val, clean.model);
    clean.weight_norm_sq = weight_norm_sq(clean.model);
    out.stages.push_back(clean);
    out.restarts.push_back(0);
    out.wall_ms.push_back(elapsed());
  }
  if (max_np == 0) return out;

  const PoisonBatch poison =
      init_poison(data.val, max_np, seeds.poison, FeatureBox::uniform(data.train.dim(), cfg.box_lo, cfg.box_hi));
  AttackReport report;
  if (mode == AttackMode::kRmdMinimax) {
    acfg.lambda_init = lambda0;
    report = minimax_attack(data.train, data.val, data.test, poison, acfg);
  } else {
    report = fixed_lambda_attack(data.train, data.val, data.test, poison, lambda0, acfg);
  }
  const double base = out.wall_ms.empty() ? 0.0 : out.wall_ms.back();
  for (const StageResult& st : report.stages) {
    out.stages.push_back(st);
    out.restarts.push_back(st.restarts);
    out.wall_ms.push_back(base + st.wall_ms);
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const DataProvider provider(cfg);

  std::vector<std::size_t> counts;
  for (double f : cfg.fractions) counts.push_back(poison_count(f, cfg.data.n_train));
  std::vector<std::size_t> distinct = counts;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  const std::size_t n_cells = cfg.modes.size() * cfg.repetitions;
  std::vector<std::vector<ResultRow>> slots(n_cells);
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t cell = next++; cell < n_cells; cell = next++) {
      const AttackMode mode = cfg.modes[cell / cfg.repetitions];
      const std::size_t rep = cell % cfg.repetitions;
      const RepetitionSeeds seeds = repetition_seeds(cfg.seed, rep);
      std::vector<ResultRow>& rows = slots[cell];
      for (std::size_t i = 0; i < cfg.fractions.size(); ++i) {
        ResultRow r;
        r.mode = mode;
        r.fraction = cfg.fractions[i];
        r.repetition = rep;
        r.seed = seeds.base;
        r.n_poison = counts[i];
        rows.push_back(std::move(r));
      }
      try {
        const ExperimentData data = provider.repetition(rep);
        const CellOutcome outcome = run_cell(cfg, mode, data, seeds, distinct);
        for (ResultRow& r : rows) {
          const auto it = std::find_if(outcome.stages.begin(), outcome.stages.end(),
                                       [&](const StageResult& s) { return s.n_poison == r.n_poison; });
          if (it == outcome.stages.end()) throw Error("no stage evaluated at " + std::to_string(r.n_poison) + " poison points");
          const auto k = static_cast<std::size_t>(it - outcome.stages.begin());
          r.test_error = it->test_error;
          r.lambda_final = it->log_lambda;
          r.weight_norm_sq = it->weight_norm_sq;
          r.restarts = outcome.restarts[k];
          r.wall_ms = outcome.wall_ms[k];
          r.model = it->model;
        }
      } catch (const std::exception& e) {
        for (ResultRow& r : rows) {
          r.ok = false;
          r.error = e.what();
        }
      }
    }
  };

  const std::size_t jobs = std::min(cfg.jobs, std::max<std::size_t>(n_cells, 1));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }

  ExperimentResult result;
  for (auto& cell : slots) {
    for (auto& r : cell) {
      result.any_failed = result.any_failed || !r.ok;
      result.rows.push_back(std::move(r));
    }
  }
  result.summary = summarize(cfg, result.rows);
  return result;
}

std::vector<SummaryRow> summarize(const ExperimentConfig& cfg, const std::vector<ResultRow>& rows) {
  std::vector<SummaryRow> out;
  auto mean_std = [](const std::vector<double>& v, double& mean, double& sd) {
    mean = 0.0;
    sd = 0.0;
    if (v.empty()) return;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    if (v.size() < 2) return;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  };
  for (AttackMode mode : cfg.modes) {
    for (double f : cfg.fractions) {
      std::vector<double> err, lam, norm;
      for (const ResultRow& r : rows) {
        if (r.ok && r.mode == mode && r.fraction == f) {
          err.push_back(r.test_error);
          lam.push_back(r.lambda_final);
          norm.push_back(r.weight_norm_sq);
        }
      }
      SummaryRow s;
      s.mode = mode;
      s.fraction = f;
      s.count = err.size();
      mean_std(err, s.mean_test_error, s.std_test_error);
      mean_std(lam, s.mean_lambda, s.std_lambda);
      mean_std(norm, s.mean_weight_norm_sq, s.std_weight_norm_sq);
      out.push_back(s);
    }
  }
  return out;
}

void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows) {
  out << "mode,fraction,repetition,seed,n_poison,test_error,lambda_final,weight_norm_sq,restarts,status\n";
  for (const ResultRow& r : rows) {
    out << to_string(r.mode) << ',' << fmt(r.fraction) << ',' << r.repetition << ',' << r.seed << ',' << r.n_poison
        << ',';
    if (r.ok) {
      out << fmt(r.test_error) << ',' << fmt(r.lambda_final) << ',' << fmt(r.weight_norm_sq) << ',' << r.restarts
          << ",ok\n";
    } else {
      out << "nan,nan,nan,0," << csv_escape("failed: " + r.error) << '\n';
    }
  }
}

void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << "mode,fraction,count,mean_test_error,std_test_error,mean_lambda,std_lambda,mean_weight_norm_sq,"
         "std_weight_norm_sq\n";
  for (const SummaryRow& s : rows) {
    out << to_string(s.mode) << ',' << fmt(s.fraction) << ',' << s.count << ',' << fmt(s.mean_test_error) << ','
        << fmt(s.std_test_error) << ',' << fmt(s.mean_lambda) << ',' << fmt(s.std_lambda) << ','
        << fmt(s.mean_weight_norm_sq) << ',' << fmt(s.std_weight_norm_sq) << '\n';
  }
}

void write_timing_csv(std::ostream& out, const std::vector<ResultRow>& rows) {
  out << "mode,fraction,repetition,wall_ms\n";
  for (const ResultRow& r : rows) {
    out << to_string(r.mode) << ',' << fmt(r.fraction) << ',' << r.repetition << ',' << fmt(r.wall_ms) << '\n';
  }
}

Histogram emit_histogram(const ModelState& s, std::size_t bins) {
  if (bins < 1) throw ConfigError("histogram needs at least one bin");
  Histogram h;
  h.frequency.assign(bins, 0.0);
  const std::size_t m = s.dim();
  double lo = m ? s.weights.minCoeff() : -0.5;
  double hi = m ? s.weights.maxCoeff() : 0.5;
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  h.edges.resize(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) {
    h.edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
  }
  h.edges.back() = hi;
  if (m == 0) return h;
  const double inv = 1.0 / static_cast<double>(m);
  for (Eigen::Index j = 0; j < s.weights.size(); ++j) {
    auto bin = static_cast<std::size_t>((s.weights[j] - lo) / (hi - lo) * static_cast<double>(bins));
    h.frequency[std::min(bin, bins - 1)] += inv;
  }
  return h;
}

void write_histogram_csv(std::ostream& out, const Histogram& h) {
  out << "bin_lo,bin_hi,frequency\n";
  for (std::size_t i = 0; i < h.frequency.size(); ++i) {
    out << fmt(h.edges[i]) << ',' << fmt(h.edges[i + 1]) << ',' << fmt(h.frequency[i]) << '\n';
  }
}

void write_experiment_outputs(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                              const ExperimentResult& result, const std::optional<std::string>& config_text) {
  std::filesystem::create_directories(dir);
  auto open = [&](const std::string& name) {
    std::ofstream f(dir / name);
    if (!f) throw Error("cannot write " + (dir / name).string());
    return f;
  };
  {
    auto f = open("results.csv");
    write_results_csv(f, result.rows);
  }
  {
    auto f = open("summary.csv");
    write_summary_csv(f, result.summary);
  }
  {
    auto f = open("timing.csv");
    write_timing_csv(f, result.rows);
  }
  {
    auto f = open("config_resolved.ini");
    f << render_config(cfg);
  }
  if (config_text) {
    auto f = open("config.ini");
    f << *config_text;
  }
  // Histograms for the first repetition: clean and most-poisoned stage of each mode.
  if (cfg.fractions.empty()) return;
  const auto [fmin, fmax] = std::minmax_element(cfg.fractions.begin(), cfg.fractions.end());
  for (const ResultRow& r : result.rows) {
    if (r.repetition != 0 || !r.ok || (r.fraction != *fmin && r.fraction != *fmax)) continue;
    auto f = open("hist_" + to_string(r.mode) + "_p" + std::to_string(r.n_poison) + ".csv");
    write_histogram_csv(f, emit_histogram(r.model, cfg.histogram_bins));
  }
}

SurfaceSet emit_surfaces(const ExperimentConfig& cfg) {
  if (cfg.data.source != DataSource::kSynthetic) throw ConfigError("surfaces need the synthetic 2-D dataset");
  const RepetitionSeeds seeds = repetition_seeds(cfg.seed, 0);
  const auto [train, val] = gen_synthetic(cfg.data.n_train, cfg.data.n_val, seeds.split);
  SpatialGrid grid{{cfg.surface.box_lo, cfg.surface.box_hi}, {cfg.surface.box_lo, cfg.surface.box_hi},
                   cfg.surface.resolution, cfg.surface.resolution};
  const HyperParams base = cfg.attack.hyper(0.0);
  const Trainer trainer = gd_trainer(cfg.attack.inner_eta, cfg.attack.inner_steps);
  SurfaceSet out;
  out.error_unreg = error_surface(train, val, grid, cfg.surface.lambda_unreg, base, trainer, cfg.surface.poison_label);
  out.error_reg = error_surface(train, val, grid, cfg.surface.lambda_reg, base, trainer, cfg.surface.poison_label);
  GridSpec spec{GridSpec::linspace(cfg.surface.grid_lo, cfg.surface.grid_hi, cfg.surface.grid_count), grid};
  out.lambda = lambda_surface(train, val, spec, base, trainer, cfg.surface.poison_label);
  return out;
}

void write_surface_outputs(const std::filesystem::path& dir, const SurfaceSet& s) {
  std::filesystem::create_directories(dir);
  const std::pair<const char*, const Surface*> files[] = {
      {"surface_error_unreg.csv", &s.error_unreg},
      {"surface_error_reg.csv", &s.error_reg},
      {"surface_best_lambda.csv", &s.lambda.best_lambda},
      {"surface_min_error.csv", &s.lambda.min_error},
  };
  for (const auto& [name, surf] : files) {
    std::ofstream f(dir / name);
    if (!f) throw Error("cannot write " + (dir / name).string());
    write_surface_csv(f, *surf, std::string(name).substr(8, std::string(name).size() - 12));
  }
}

CvResult run_cv(const ExperimentConfig& cfg, std::size_t rep) {
  cfg.validate();
  const DataProvider provider(cfg);
  const ExperimentData data = provider.repetition(rep);
  const RepetitionSeeds seeds = repetition_seeds(cfg.seed, rep);
  GridSpec grid{GridSpec::linspace(cfg.cv.lambda_lo, cfg.cv.lambda_hi, cfg.cv.lambda_count), {}};
  SgdConfig sgd = cfg.attack.eval;
  sgd.seed = seeds.eval;
  return cross_validate_lambda(data.train, grid, sgd, {cfg.cv.folds, seeds.cv, cfg.cv.criterion, cfg.attack.scaling});
}

namespace {

Dataset random_dataset(Rng& rng, std::size_t n, std::size_t m) {
  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  Vector y(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = rng.normal();
    y[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
  }
  return {std::move(x), std::move(y)};
}

double rel_err(const Vector& a, const Vector& b) {
  const double scale = std::max(b.norm(), 1e-12);
  return (a - b).norm() / scale;
}

}  // namespace

bool run_checks(std::ostream& out, std::uint64_t seed) {
  Rng rng(seed);
  bool all = true;
  auto report = [&](const std::string& name, double value, double tol) {
    const bool pass = value <= tol;
    all = all && pass;
    out << (pass ? "PASS " : "FAIL ") << name << ": " << std::setprecision(3) << std::scientific << value
        << " (tol " << tol << ")\n"
        << std::defaultfloat;
  };

  double worst_grad = 0.0, worst_hvp = 0.0, worst_xp = 0.0, worst_lam = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t m = 2 + rng.below(8), n = 5 + rng.below(20);
    const Dataset d = random_dataset(rng, n, m);
    ModelState s{Vector::Zero(static_cast<Eigen::Index>(m)), rng.normal() * 0.3};
    for (Eigen::Index j = 0; j < s.weights.size(); ++j) s.weights[j] = 0.5 * rng.normal();
    const HyperParams h{rng.uniform(-3.0, 1.0), {-8.0, 6.0}, PenaltyScaling::kAbsolute, false};

    const Vector theta = s.flat();
    const double step = 1e-6;
    Vector fd(theta.size());
    for (Eigen::Index k = 0; k < theta.size(); ++k) {
      Vector tp = theta, tm = theta;
      tp[k] += step;
      tm[k] -= step;
      fd[k] = (regularized_loss(d, ModelState::from_flat(tp), h) - regularized_loss(d, ModelState::from_flat(tm), h)) /
              (2 * step);
    }
    worst_grad = std::max(worst_grad, rel_err(grad_w(d, s, h).flat(), fd));

    Vector v(theta.size());
    for (Eigen::Index k = 0; k < v.size(); ++k) v[k] = rng.normal();
    Vector hv_fd = Vector::Zero(theta.size());
    for (Eigen::Index k = 0; k < theta.size(); ++k) {
      Vector tp = theta, tm = theta;
      tp[k] += 1e-5;
      tm[k] -= 1e-5;
      const Vector col =
          (grad_w(d, ModelState::from_flat(tp), h).flat() - grad_w(d, ModelState::from_flat(tm), h).flat()) / 2e-5;
      hv_fd += col * v[k];
    }
    worst_hvp = std::max(worst_hvp, rel_err(hvp_ww(d, s, h, v), hv_fd));

    const RowRange rows{n - 1, 1};
    const Matrix xp = hvp_xp_w(d, rows, s, v);
    Vector xp_fd(static_cast<Eigen::Index>(m));
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(m); ++j) {
      Dataset dp = d, dm = d;
      dp.features(static_cast<Eigen::Index>(n - 1), j) += 1e-5;
      dm.features(static_cast<Eigen::Index>(n - 1), j) -= 1e-5;
      xp_fd[j] = (grad_w(dp, s, h).flat() - grad_w(dm, s, h).flat()).dot(v) / 2e-5;
    }
    worst_xp = std::max(worst_xp, rel_err(xp.row(0).transpose(), xp_fd));

    HyperParams hp = h, hm = h;
    hp.log_lambda += 1e-5;
    hm.log_lambda -= 1e-5;
    const double lam_fd = (grad_w(d, s, hp).flat() - grad_w(d, s, hm).flat()).dot(v) / 2e-5;
    worst_lam = std::max(worst_lam, std::abs(hvp_lambda_w(s, h, v, n) - lam_fd) / std::max(std::abs(lam_fd), 1e-12));
  }
  report("grad_w vs finite differences", worst_grad, 1e-5);
  report("hvp_ww vs finite-difference Hessian", worst_hvp, 1e-6);
  report("hvp_xp_w vs finite differences", worst_xp, 1e-5);
  report("hvp_lambda_w vs finite differences", worst_lam, 1e-6);

  auto [train, val] = gen_synthetic(32, 64, derive_seed(seed, 7));
  const PoisonBatch poison = init_poison(val, 1, derive_seed(seed, 8), FeatureBox::uniform(2, -9.5, 9.5));
  const HyperParams h{std::log(20.0), {-8.0, 6.0}, PenaltyScaling::kPerSample, false};
  const ModelState w0 = ModelState::zeros(2);
  const HypergradResult rmd =
      rmd_hypergrad(PoisonedTrainingSet{train, poison.features, poison.labels}, val, h, w0, 0.2, 50);
  const FiniteDiffHypergrad fd =
      finite_diff_hypergrad(train, poison.features, poison.labels, val, h, w0, 0.2, 50, 1e-4);
  const Vector a = rmd.grad_xp.row(0).transpose(), b = fd.grad_xp.row(0).transpose();
  report("RMD poison hypergradient vs retraining differences", rel_err(a, b), 1e-2);
  report("RMD lambda hypergradient vs retraining differences",
         std::abs(rmd.grad_lambda - fd.grad_lambda) / std::max(std::abs(fd.grad_lambda), 1e-12), 1e-2);
  return all;
}

}  // namespace poisonlr
