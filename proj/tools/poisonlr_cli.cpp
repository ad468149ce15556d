// poisonlr: poisoning attacks against L2-regularized logistic regression.
//
//   poisonlr attack  --config exp.ini --out results/ [--seed N] [--jobs N]
//   poisonlr surface --config synth.ini --out surfaces/
//   poisonlr cv      --config exp.ini [--rep R]
//   poisonlr check   [--seed N]

#include "poisonlr/config.hpp"
#include "poisonlr/errors.hpp"
#include "poisonlr/experiment.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

namespace {

struct CommonOptions {
  std::string config_path;
  std::string preset;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::string out = "out";
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "key=value config file with [section] headers");
  cmd->add_option("--preset", o.preset, "synthetic | mnist08 | fmnist | features2048 (overrides the file)");
  cmd->add_option("--set", o.overrides, "section.key=value override, repeatable");
  cmd->add_option("--seed", o.seed, "experiment seed");
  cmd->add_option("--jobs", o.jobs, "parallel cells");
  cmd->add_option("--out", o.out, "output directory");
}

std::optional<std::string> read_text(const std::string& path) {
  if (path.empty()) return std::nullopt;
  std::ifstream in(path);
  if (!in) throw poisonlr::ConfigError("cannot open config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

poisonlr::ExperimentConfig resolve(const CommonOptions& o, std::optional<std::string>& text) {
  text = read_text(o.config_path);
  poisonlr::ExperimentConfig cfg = poisonlr::load_config_text(
      text.value_or(""), [](const char* k) { return std::getenv(k); },
      o.preset.empty() ? std::nullopt : std::optional<std::string>(o.preset));
  for (const std::string& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw poisonlr::ConfigError("--set expects section.key=value, got '" + kv + "'");
    poisonlr::apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) cfg.seed = *o.seed;
  if (o.jobs) cfg.jobs = *o.jobs;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Poisoning attacks and regularization for logistic regression"};
  app.require_subcommand(1);

  CommonOptions attack_opts, surface_opts, cv_opts;
  std::uint64_t check_seed = 0;
  std::size_t cv_rep = 0;

  auto* attack = app.add_subcommand("attack", "run the experiment grid and write results.csv / summary.csv");
  add_common(attack, attack_opts);
  auto* surface = app.add_subcommand("surface", "write error and best-lambda surfaces for the synthetic problem");
  add_common(surface, surface_opts);
  auto* cv = app.add_subcommand("cv", "select lambda_CLEAN by k-fold cross-validation");
  add_common(cv, cv_opts);
  cv->add_option("--rep", cv_rep, "repetition whose split is used");
  auto* check = app.add_subcommand("check", "verify gradients, HVPs and hypergradients against finite differences");
  check->add_option("--seed", check_seed, "seed for the random instances");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*attack) {
      std::optional<std::string> text;
      const auto cfg = resolve(attack_opts, text);
      const auto result = poisonlr::run_experiment(cfg);
      poisonlr::write_experiment_outputs(attack_opts.out, cfg, result, text);
      std::size_t failed = 0;
      for (const auto& r : result.rows) failed += r.ok ? 0 : 1;
      std::cout << "wrote " << result.rows.size() << " rows to " << attack_opts.out << "/results.csv";
      if (failed) std::cout << " (" << failed << " failed)";
      std::cout << '\n';
      for (const auto& s : result.summary) {
        std::cout << std::left << std::setw(12) << poisonlr::to_string(s.mode) << " fraction=" << std::setw(9)
                  << s.fraction << " test_error=" << s.mean_test_error << " lambda=" << s.mean_lambda
                  << " |w|^2=" << s.mean_weight_norm_sq << '\n';
      }
      return result.any_failed ? 1 : 0;
    }
    if (*surface) {
      std::optional<std::string> text;
      const auto cfg = resolve(surface_opts, text);
      const auto surfaces = poisonlr::emit_surfaces(cfg);
      poisonlr::write_surface_outputs(surface_opts.out, surfaces);
      std::cout << "spread at lambda=" << cfg.surface.lambda_unreg << ": " << surfaces.error_unreg.spread() << '\n'
                << "spread at lambda=" << cfg.surface.lambda_reg << ": " << surfaces.error_reg.spread() << '\n';
      return 0;
    }
    if (*cv) {
      std::optional<std::string> text;
      const auto cfg = resolve(cv_opts, text);
      const auto res = poisonlr::run_cv(cfg, cv_rep);
      const auto grid = poisonlr::GridSpec::linspace(cfg.cv.lambda_lo, cfg.cv.lambda_hi, cfg.cv.lambda_count);
      std::cout << "lambda,mean_score\n";
      for (std::size_t i = 0; i < grid.size(); ++i) std::cout << grid[i] << ',' << res.mean_score[i] << '\n';
      std::cout << "lambda_clean = " << res.best_lambda << '\n';
      return 0;
    }
    if (*check) return poisonlr::run_checks(std::cout, check_seed) ? 0 : 1;
  } catch (const poisonlr::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
