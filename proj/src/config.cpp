#include "poisonlr/config.hpp"

#include "poisonlr/errors.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

namespace poisonlr {

std::string to_string(AttackMode m) {
  switch (m) {
    case AttackMode::kFixedSmall: return "fixed_small";
    case AttackMode::kFixedLarge: return "fixed_large";
    case AttackMode::kCvClean: return "cv_clean";
    case AttackMode::kRmdMinimax: return "rmd_minimax";
  }
  return "unknown";
}

AttackMode parse_attack_mode(const std::string& s) {
  if (s == "fixed_small") return AttackMode::kFixedSmall;
  if (s == "fixed_large") return AttackMode::kFixedLarge;
  if (s == "cv_clean") return AttackMode::kCvClean;
  if (s == "rmd_minimax") return AttackMode::kRmdMinimax;
  throw ConfigError("unknown attack mode '" + s + "'");
}

namespace {

std::string trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

std::string fmt_real(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::size_t parse_count(const std::string& key, const std::string& s) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + s + "'");
  return v;
}

std::uint64_t parse_u64(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError(key + ": expected an unsigned integer, got '" + s + "'");
  return v;
}

int parse_int(const std::string& key, const std::string& s) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError(key + ": expected an integer, got '" + s + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "on" || s == "yes" || s == "1") return true;
  if (s == "false" || s == "off" || s == "no" || s == "0") return false;
  throw ConfigError(key + ": expected a boolean, got '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  int depth = 0;
  for (char c : s) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (c == ',' && depth == 0) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty()) out.push_back(trim(cur));
  return out;
}

struct Binding {
  const char* key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define REAL(KEY, FIELD)                                                                   \
  Binding{KEY, [](ExperimentConfig& c, const std::string& v) { c.FIELD = parse_real(v); }, \
          [](const ExperimentConfig& c) { return fmt_real(c.FIELD); }}
#define COUNT(KEY, FIELD)                                                                       \
  Binding{KEY, [](ExperimentConfig& c, const std::string& v) { c.FIELD = parse_count(KEY, v); }, \
          [](const ExperimentConfig& c) { return std::to_string(c.FIELD); }}
#define FLAG(KEY, FIELD)                                                                       \
  Binding{KEY, [](ExperimentConfig& c, const std::string& v) { c.FIELD = parse_bool(KEY, v); }, \
          [](const ExperimentConfig& c) { return std::string(c.FIELD ? "true" : "false"); }}
#define TEXT(KEY, FIELD)                                                              \
  Binding{KEY, [](ExperimentConfig& c, const std::string& v) { c.FIELD = v; }, \
          [](const ExperimentConfig& c) { return c.FIELD; }}

const std::vector<Binding>& bindings() {
  static const std::vector<Binding> table = {
      Binding{"data.source",
              [](ExperimentConfig& c, const std::string& v) {
                if (v == "synthetic") c.data.source = DataSource::kSynthetic;
                else if (v == "idx") c.data.source = DataSource::kIdx;
                else if (v == "csv") c.data.source = DataSource::kCsv;
                else throw ConfigError("data.source: expected synthetic, idx or csv, got '" + v + "'");
              },
              [](const ExperimentConfig& c) {
                return std::string(c.data.source == DataSource::kSynthetic ? "synthetic"
                                   : c.data.source == DataSource::kIdx     ? "idx"
                                                                           : "csv");
              }},
      TEXT("data.pool_images", data.pool_images),
      TEXT("data.pool_labels", data.pool_labels),
      TEXT("data.test_images", data.test_images),
      TEXT("data.test_labels", data.test_labels),
      Binding{"data.class_a", [](ExperimentConfig& c, const std::string& v) { c.data.class_a = parse_int("data.class_a", v); },
              [](const ExperimentConfig& c) { return std::to_string(c.data.class_a); }},
      Binding{"data.class_b", [](ExperimentConfig& c, const std::string& v) { c.data.class_b = parse_int("data.class_b", v); },
              [](const ExperimentConfig& c) { return std::to_string(c.data.class_b); }},
      TEXT("data.pool_csv", data.pool_csv),
      TEXT("data.test_csv", data.test_csv),
      FLAG("data.normalize", data.normalize),
      COUNT("data.n_train", data.n_train),
      COUNT("data.n_val", data.n_val),
      COUNT("data.n_test", data.n_test),
      FLAG("data.balanced", data.balanced),

      REAL("attack.alpha", attack.alpha),
      REAL("attack.beta", attack.beta),
      COUNT("attack.t_dp", attack.t_dp),
      COUNT("attack.t_lambda", attack.t_lambda),
      COUNT("attack.t_mul", attack.t_mul),
      REAL("attack.inner_eta", attack.inner_eta),
      COUNT("attack.inner_steps", attack.inner_steps),
      REAL("attack.lambda_lo", attack.lambda_range.lo),
      REAL("attack.lambda_hi", attack.lambda_range.hi),
      REAL("attack.lambda_init", attack.lambda_init),
      REAL("attack.max_lambda_step", attack.max_lambda_step),
      Binding{"attack.penalty_scaling",
              [](ExperimentConfig& c, const std::string& v) {
                if (v == "absolute") c.attack.scaling = PenaltyScaling::kAbsolute;
                else if (v == "per_sample") c.attack.scaling = PenaltyScaling::kPerSample;
                else throw ConfigError("attack.penalty_scaling: expected absolute or per_sample, got '" + v + "'");
              },
              [](const ExperimentConfig& c) {
                return std::string(c.attack.scaling == PenaltyScaling::kAbsolute ? "absolute" : "per_sample");
              }},
      FLAG("attack.penalize_bias", attack.penalize_bias),
      Binding{"attack.step_scaling",
              [](ExperimentConfig& c, const std::string& v) {
                if (v == "none") c.attack.step_scaling = StepScaling::kNone;
                else if (v == "rows") c.attack.step_scaling = StepScaling::kRows;
                else throw ConfigError("attack.step_scaling: expected none or rows, got '" + v + "'");
              },
              [](const ExperimentConfig& c) {
                return std::string(c.attack.step_scaling == StepScaling::kNone ? "none" : "rows");
              }},
      COUNT("attack.group_size", attack.poison_group_size),
      REAL("attack.box_lo", box_lo),
      REAL("attack.box_hi", box_hi),
      FLAG("attack.restart", attack.restart.enabled),
      COUNT("attack.restart_window", attack.restart.window),
      REAL("attack.restart_threshold", attack.restart.threshold),
      Binding{"attack.update_mode",
              [](ExperimentConfig& c, const std::string& v) {
                if (v == "simultaneous") c.attack.update_mode = UpdateMode::kSimultaneous;
                else if (v == "alternating") c.attack.update_mode = UpdateMode::kAlternating;
                else throw ConfigError("attack.update_mode: expected simultaneous or alternating, got '" + v + "'");
              },
              [](const ExperimentConfig& c) {
                return std::string(c.attack.update_mode == UpdateMode::kSimultaneous ? "simultaneous" : "alternating");
              }},

      REAL("train.eta_tr", attack.eval.eta_tr),
      COUNT("train.batch_size", attack.eval.batch_size),
      COUNT("train.epochs", attack.eval.epochs),

      COUNT("cv.folds", cv.folds),
      REAL("cv.lambda_lo", cv.lambda_lo),
      REAL("cv.lambda_hi", cv.lambda_hi),
      COUNT("cv.lambda_count", cv.lambda_count),
      Binding{"cv.criterion",
              [](ExperimentConfig& c, const std::string& v) {
                if (v == "error") c.cv.criterion = CvCriterion::kZeroOneError;
                else if (v == "cross_entropy") c.cv.criterion = CvCriterion::kCrossEntropy;
                else throw ConfigError("cv.criterion: expected error or cross_entropy, got '" + v + "'");
              },
              [](const ExperimentConfig& c) {
                return std::string(c.cv.criterion == CvCriterion::kZeroOneError ? "error" : "cross_entropy");
              }},

      COUNT("surface.resolution", surface.resolution),
      REAL("surface.box_lo", surface.box_lo),
      REAL("surface.box_hi", surface.box_hi),
      REAL("surface.lambda_unreg", surface.lambda_unreg),
      REAL("surface.lambda_reg", surface.lambda_reg),
      REAL("surface.grid_lo", surface.grid_lo),
      REAL("surface.grid_hi", surface.grid_hi),
      COUNT("surface.grid_count", surface.grid_count),
      REAL("surface.poison_label", surface.poison_label),

      Binding{"experiment.modes",
              [](ExperimentConfig& c, const std::string& v) {
                c.modes.clear();
                for (const auto& m : split_list(v)) c.modes.push_back(parse_attack_mode(m));
              },
              [](const ExperimentConfig& c) {
                std::string s;
                for (std::size_t i = 0; i < c.modes.size(); ++i) s += (i ? "," : "") + to_string(c.modes[i]);
                return s;
              }},
      Binding{"experiment.fractions",
              [](ExperimentConfig& c, const std::string& v) {
                c.fractions.clear();
                for (const auto& f : split_list(v)) c.fractions.push_back(parse_real(f));
              },
              [](const ExperimentConfig& c) {
                std::string s;
                for (std::size_t i = 0; i < c.fractions.size(); ++i) s += (i ? "," : "") + fmt_real(c.fractions[i]);
                return s;
              }},
      COUNT("experiment.repetitions", repetitions),
      Binding{"experiment.seed", [](ExperimentConfig& c, const std::string& v) { c.seed = parse_u64("experiment.seed", v); },
              [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
      REAL("experiment.lambda_small", lambda_small),
      REAL("experiment.lambda_large", lambda_large),
      COUNT("experiment.histogram_bins", histogram_bins),
      COUNT("experiment.jobs", jobs),
  };
  return table;
}

#undef REAL
#undef COUNT
#undef FLAG
#undef TEXT

}  // namespace

double parse_real(const std::string& raw) {
  std::string s = trim(raw);
  double sign = 1.0;
  if (!s.empty() && s.front() == '-' && s.find("log(") == 1) {
    sign = -1.0;
    s.erase(0, 1);
  }
  for (const char* fn : {"log(", "ln("}) {
    const std::string f(fn);
    if (s.rfind(f, 0) == 0 && s.back() == ')') {
      const double inner = parse_real(s.substr(f.size(), s.size() - f.size() - 1));
      if (!(inner > 0.0)) throw ConfigError("log() of a non-positive value in '" + raw + "'");
      return sign * std::log(inner);
    }
  }
  double v = 0.0;
  const char* begin = s.data() + (s.size() > 0 && s.front() == '+' ? 1 : 0);
  const auto [ptr, ec] = std::from_chars(begin, s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ConfigError("expected a real number, got '" + raw + "'");
  }
  return v;
}

std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find_first_of("#;");
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": unterminated section header");
      section = trim(std::string_view(body).substr(1, body.size() - 2));
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    const std::string full = section.empty() ? key : section + "." + key;
    if (!seen.insert(full).second) throw ConfigError("line " + std::to_string(line_no) + ": duplicate key " + full);
    out.emplace_back(full, value);
  }
  return out;
}

void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& b : bindings()) {
    if (key == b.key) {
      b.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown configuration key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> dump_settings(const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& b : bindings()) out.emplace_back(b.key, b.get(cfg));
  return out;
}

std::string render_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << "preset = " << cfg.preset << '\n';
  std::string section;
  for (const auto& [key, value] : dump_settings(cfg)) {
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      os << "\n[" << sec << "]\n";
      section = sec;
    }
    os << key.substr(dot + 1) << " = " << value << '\n';
  }
  return os.str();
}

std::string env_name(const std::string& key) {
  std::string out = kEnvPrefix;
  for (char c : key) out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

ExperimentConfig load_config_text(const std::string& text,
                                  const std::function<const char*(const char*)>& getenv_fn,
                                  const std::optional<std::string>& preset_override) {
  const auto entries = parse_key_values(text);
  std::string preset = "synthetic";
  for (const auto& [k, v] : entries) {
    if (k == "preset") preset = v;
  }
  if (const char* env = getenv_fn ? getenv_fn((std::string(kEnvPrefix) + "PRESET").c_str()) : nullptr) preset = env;
  if (preset_override) preset = *preset_override;
  ExperimentConfig cfg = preset_config(preset);
  for (const auto& [k, v] : entries) {
    if (k != "preset") apply_setting(cfg, k, v);
  }
  if (getenv_fn) {
    for (const auto& b : bindings()) {
      if (const char* v = getenv_fn(env_name(b.key).c_str())) b.set(cfg, v);
    }
  }
  return cfg;
}

void ExperimentConfig::validate() const {
  attack.validate();
  if (box_lo > box_hi) throw ConfigError("attack.box_lo > attack.box_hi");
  if (repetitions < 1) throw ConfigError("experiment.repetitions must be >= 1");
  if (jobs < 1) throw ConfigError("experiment.jobs must be >= 1");
  if (modes.empty()) throw ConfigError("experiment.modes is empty");
  if (fractions.empty()) throw ConfigError("experiment.fractions is empty");
  for (double f : fractions) {
    if (!(f >= 0.0 && f <= 0.2)) throw ConfigError("poison fractions must lie in [0, 0.2]");
  }
  if (histogram_bins < 1) throw ConfigError("experiment.histogram_bins must be >= 1");
  if (cv.folds < 2) throw ConfigError("cv.folds must be >= 2");
  if (cv.lambda_count < 1) throw ConfigError("cv.lambda_count must be >= 1");
  if (data.source == DataSource::kIdx &&
      (data.pool_images.empty() || data.pool_labels.empty() || data.test_images.empty() || data.test_labels.empty())) {
    throw ConfigError("idx data needs pool_images, pool_labels, test_images and test_labels");
  }
  if (data.source == DataSource::kCsv && (data.pool_csv.empty() || data.test_csv.empty())) {
    throw ConfigError("csv data needs pool_csv and test_csv");
  }
}

ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig c;
  c.preset = name;
  c.attack.lambda_init = std::log(5.0);
  c.attack.scaling = PenaltyScaling::kPerSample;
  c.attack.step_scaling = StepScaling::kRows;
  c.attack.max_lambda_step = 0.5;
  c.fractions = {0.0, 17.0 / 512, 34.0 / 512, 51.0 / 512, 68.0 / 512, 85.0 / 512};
  if (name == "synthetic") {
    c.data.source = DataSource::kSynthetic;
    c.data.n_train = 32;
    c.data.n_val = 64;
    c.data.n_test = 1000;
    c.attack.alpha = 0.4;
    c.attack.beta = 0.4;
    c.attack.t_dp = 50;
    c.attack.t_lambda = 50;
    c.attack.t_mul = 50;
    c.attack.inner_eta = 0.2;
    c.attack.inner_steps = 500;
    c.attack.lambda_range = {-8.0, std::log(200.0)};
    c.attack.poison_group_size = 1;
    c.attack.eval = {0.2, 32, 100, 0};
    c.box_lo = -9.5;
    c.box_hi = 9.5;
    c.lambda_small = -8.0;
    c.lambda_large = std::log(20.0);
    c.fractions = {0.0, 1.0 / 32, 2.0 / 32, 3.0 / 32, 4.0 / 32, 5.0 / 32};
    return c;
  }
  if (name == "mnist08" || name == "fmnist") {
    const bool mnist = name == "mnist08";
    c.data.source = DataSource::kIdx;
    const std::string dir = mnist ? "data/mnist08/" : "data/fmnist/";
    c.data.pool_images = dir + "pool-images-idx3-ubyte";
    c.data.pool_labels = dir + "pool-labels-idx1-ubyte";
    c.data.test_images = dir + "test-images-idx3-ubyte";
    c.data.test_labels = dir + "test-labels-idx1-ubyte";
    c.data.class_a = 0;
    c.data.class_b = mnist ? 8 : 2;  // FMNIST: 0 = T-shirt/top, 2 = pullover
    c.data.n_train = 512;
    c.data.n_val = 171;
    c.attack.alpha = mnist ? 0.99 : 0.90;
    c.attack.beta = mnist ? 0.80 : 0.30;
    c.attack.t_dp = 100;
    c.attack.t_lambda = 50;
    c.attack.t_mul = 100;
    c.attack.inner_eta = mnist ? 0.10 : 0.08;
    c.attack.inner_steps = mnist ? 150 : 200;
    c.attack.lambda_range = {-8.0, std::log(mnist ? 200.0 : 400.0)};
    c.attack.poison_group_size = 17;
    c.attack.eval = {1e-2, 64, 200, 0};
    c.box_lo = 0.0;
    c.box_hi = 1.0;
    c.lambda_small = -8.0;
    c.lambda_large = c.attack.lambda_range.hi;
    return c;
  }
  if (name == "features2048") {
    c.data.source = DataSource::kCsv;
    c.data.pool_csv = "data/features2048/pool.csv";
    c.data.test_csv = "data/features2048/test.csv";
    c.data.normalize = true;
    c.data.n_train = 512;
    c.data.n_val = 171;
    c.attack.alpha = 0.90;
    c.attack.beta = 0.40;
    c.attack.t_dp = 100;
    c.attack.t_lambda = 50;
    c.attack.t_mul = 200;
    c.attack.inner_eta = 0.05;
    c.attack.inner_steps = 200;
    c.attack.lambda_range = {-8.0, std::log(20000.0)};
    c.attack.poison_group_size = 17;
    c.attack.eval = {1e-3, 64, 300, 0};
    c.box_lo = -0.5;
    c.box_hi = 0.5;
    c.lambda_small = -8.0;
    c.lambda_large = c.attack.lambda_range.hi;
    return c;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

std::vector<std::string> preset_names() { return {"synthetic", "mnist08", "fmnist", "features2048"}; }

}  // namespace poisonlr
