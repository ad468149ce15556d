#pragma once

#include "poisonlr/attack.hpp"
#include "poisonlr/lr_model.hpp"
#include "poisonlr/oracles.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace poisonlr {

enum class DataSource { kSynthetic, kIdx, kCsv };

enum class AttackMode {
  kFixedSmall,  ///< lambda frozen at the small value
  kFixedLarge,  ///< lambda frozen at the large value
  kCvClean,     ///< lambda from k-fold CV on clean data, then frozen
  kRmdMinimax,  ///< lambda learned jointly with the poison
};

std::string to_string(AttackMode m);
AttackMode parse_attack_mode(const std::string& s);

struct DataConfig {
  DataSource source = DataSource::kSynthetic;
  std::string pool_images, pool_labels, test_images, test_labels;
  int class_a = 0;
  int class_b = 8;
  std::string pool_csv, test_csv;
  bool normalize = false;
  std::size_t n_train = 32;
  std::size_t n_val = 64;
  std::size_t n_test = 1000;  ///< synthetic only
  bool balanced = true;
};

struct CvConfig {
  std::size_t folds = 5;
  double lambda_lo = -8.0;
  double lambda_hi = 1.0;
  std::size_t lambda_count = 10;
  CvCriterion criterion = CvCriterion::kZeroOneError;
};

struct SurfaceConfig {
  std::size_t resolution = 50;
  double box_lo = -9.5;
  double box_hi = 9.5;
  double lambda_unreg = -8.0;
  double lambda_reg = 2.995732273553991;  // log(20)
  double grid_lo = -8.0;
  double grid_hi = 6.0;
  std::size_t grid_count = 15;
  double poison_label = 0.0;
};

/// Everything one `attack`/`surface`/`cv` run needs.
struct ExperimentConfig {
  std::string preset = "synthetic";
  DataConfig data;
  AttackConfig attack;
  double box_lo = -9.5;
  double box_hi = 9.5;
  CvConfig cv;
  SurfaceConfig surface;
  std::vector<AttackMode> modes{AttackMode::kFixedSmall, AttackMode::kFixedLarge, AttackMode::kCvClean,
                                AttackMode::kRmdMinimax};
  std::vector<double> fractions{0.0, 1.0 / 30, 2.0 / 30, 3.0 / 30, 4.0 / 30, 5.0 / 30};
  std::size_t repetitions = 1;
  std::uint64_t seed = 0;
  double lambda_small = -8.0;
  double lambda_large = 2.995732273553991;
  std::size_t histogram_bins = 50;
  std::size_t jobs = 1;

  void validate() const;
};

/// Named parameter sets: synthetic, mnist08, fmnist, features2048.
ExperimentConfig preset_config(const std::string& name);
std::vector<std::string> preset_names();

/// Flat `key = value` text with `[section]` headers; `#` and `;` start comments.
/// Keys are returned as `section.key` in file order. Duplicate keys are errors.
std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text);

/// Reals accept plain numbers and `log(x)` / `-log(x)`.
double parse_real(const std::string& s);

/// Applies one `section.key` setting. Unknown keys throw ConfigError.
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value);

/// Every key with its current value, in a stable order (round-trips through parse + apply).
std::vector<std::pair<std::string, std::string>> dump_settings(const ExperimentConfig& cfg);
std::string render_config(const ExperimentConfig& cfg);

/// Environment overrides: POISONLR_<SECTION>_<KEY>, e.g. POISONLR_ATTACK_ALPHA.
inline constexpr const char* kEnvPrefix = "POISONLR_";
std::string env_name(const std::string& key);

/// Preset, then the file's settings, then environment overrides found through
/// `getenv_fn`. The preset is `preset_override` if given, else POISONLR_PRESET,
/// else the file's top-level `preset` key, else "synthetic".
ExperimentConfig load_config_text(const std::string& text,
                                  const std::function<const char*(const char*)>& getenv_fn,
                                  const std::optional<std::string>& preset_override = std::nullopt);

}  // namespace poisonlr
