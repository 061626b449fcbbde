#include "churnkit/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace churnkit {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t comma = s.find(',', start);
    const std::size_t end = comma == std::string::npos ? s.size() : comma;
    const std::string item = trim(s.substr(start, end - start));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const char* expected) {
  throw std::invalid_argument("config key '" + key + "': cannot parse '" +
                              value + "' as " + expected);
}

double parse_double(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    bad_value(key, value, "a real number");
  }
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    bad_value(key, value, "a non-negative integer");
  }
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  return static_cast<std::size_t>(parse_u64(key, value));
}

bool parse_bool(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, value, "a boolean (true/false)");
}

std::vector<double> parse_double_list(const std::string& key,
                                      const std::string& value) {
  std::vector<double> out;
  for (const std::string& item : split_csv(value)) {
    out.push_back(parse_double(key, item));
  }
  if (out.empty()) bad_value(key, value, "a nonempty comma list of reals");
  return out;
}

std::vector<std::size_t> parse_size_list(const std::string& key,
                                         const std::string& value) {
  std::vector<std::size_t> out;
  for (const std::string& item : split_csv(value)) {
    out.push_back(parse_size(key, item));
  }
  if (out.empty()) bad_value(key, value, "a nonempty comma list of integers");
  return out;
}

std::vector<std::uint64_t> parse_u64_list(const std::string& key,
                                          const std::string& value) {
  std::vector<std::uint64_t> out;
  for (const std::string& item : split_csv(value)) {
    out.push_back(parse_u64(key, item));
  }
  if (out.empty()) bad_value(key, value, "a nonempty comma list of integers");
  return out;
}

}  // namespace

ConfigMap read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  ConfigMap kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": expected key=value, got '" + stripped +
                                  "'");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) {
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": empty key");
    }
    kv[key] = value;  // later assignments win
  }
  return kv;
}

std::uint64_t config_hash(const ConfigMap& kv) {
  std::uint64_t h = 0xCBF29CE484222325ull;  // FNV-1a 64 offset basis
  auto feed = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001B3ull;
    }
  };
  for (const auto& [key, value] : kv) {  // std::map iterates sorted
    feed(key);
    feed("=");
    feed(value);
    feed("\n");
  }
  return h;
}

std::string config_hash_hex(const ConfigMap& kv) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(config_hash(kv)));
  return buf;
}

MethodSpec parse_method_token(const std::string& token,
                              const TrainConfig& base) {
  std::string t = trim(token);
  if (t.empty()) throw std::invalid_argument("empty method token");

  MethodSpec spec;
  spec.train = base;

  // Optional @mode suffix.
  std::string mode_str;
  if (const std::size_t at = t.find('@'); at != std::string::npos) {
    mode_str = t.substr(at + 1);
    t.erase(at);
  }

  // Optional :param, or trailing-digit sugar.
  std::string name = t, param;
  if (const std::size_t colon = t.find(':'); colon != std::string::npos) {
    name = t.substr(0, colon);
    param = t.substr(colon + 1);
  } else {
    std::size_t digits = t.size();
    while (digits > 0 && std::isdigit(static_cast<unsigned char>(t[digits - 1]))) {
      --digits;
    }
    if (digits < t.size() && digits > 0) {
      name = t.substr(0, digits);
      param = t.substr(digits);
    }
  }

  if (name == "erm") {
    spec.kind = MethodKind::erm;
  } else if (name == "swa") {
    spec.kind = MethodKind::swa;
  } else if (name == "mc" || name == "mc_dropout") {
    spec.kind = MethodKind::mc_dropout;
    if (spec.train.dropout_p <= 0.0) spec.train.dropout_p = 0.1;
  } else if (name == "deep" || name == "deep_ensemble") {
    spec.kind = MethodKind::deep_ensemble;
  } else if (name == "bagging") {
    spec.kind = MethodKind::bagging;
  } else if (name == "twin") {
    spec.kind = MethodKind::twin;
  } else {
    throw std::invalid_argument("unknown method '" + name + "' in token '" +
                                token + "'");
  }

  if (!param.empty()) {
    switch (spec.kind) {
      case MethodKind::erm:
      case MethodKind::swa:
        throw std::invalid_argument("method '" + name +
                                    "' takes no parameter (token '" + token +
                                    "')");
      case MethodKind::mc_dropout:
        spec.mc_passes = parse_size("methods", param);
        if (spec.mc_passes == 0) {
          throw std::invalid_argument("mc passes must be >= 1 in '" + token +
                                      "'");
        }
        break;
      case MethodKind::deep_ensemble:
      case MethodKind::bagging:
        spec.ensemble_size = parse_size("methods", param);
        if (spec.ensemble_size == 0) {
          throw std::invalid_argument("ensemble size must be >= 1 in '" +
                                      token + "'");
        }
        break;
      case MethodKind::twin:
        spec.lambda = parse_double("methods", param);
        if (spec.lambda < 0.0) {
          throw std::invalid_argument("twin lambda must be >= 0 in '" + token +
                                      "'");
        }
        break;
    }
  }

  if (!mode_str.empty()) {
    if (spec.kind != MethodKind::twin) {
      throw std::invalid_argument("only twin accepts an @mode suffix ('" +
                                  token + "')");
    }
    if (mode_str == "disjoint") {
      spec.overlap = OverlapMode::disjoint;
    } else if (mode_str == "bootstrap") {
      spec.overlap = OverlapMode::bootstrap;
    } else if (mode_str == "shared") {
      spec.overlap = OverlapMode::shared;
    } else {
      throw std::invalid_argument("unknown overlap mode '" + mode_str +
                                  "' in token '" + token + "'");
    }
  }
  return spec;
}

std::vector<MethodSpec> parse_method_list(const std::string& csv,
                                          const TrainConfig& base) {
  std::vector<MethodSpec> specs;
  for (const std::string& token : split_csv(csv)) {
    specs.push_back(parse_method_token(token, base));
  }
  if (specs.empty()) {
    throw std::invalid_argument("method list is empty: '" + csv + "'");
  }
  return specs;
}

RunConfig make_run_config(const ConfigMap& kv) {
  RunConfig cfg;
  cfg.raw = kv;

  for (const auto& [key, value] : kv) {
    if (key == "data.path") {
      cfg.dataset_path = value;
    } else if (key == "data.name") {
      cfg.dataset_name = value;
    } else if (key == "data.task") {
      if (value == "classification") {
        cfg.task = Task::binary_classification;
      } else if (value == "regression") {
        cfg.task = Task::regression;
      } else {
        bad_value(key, value, "classification|regression");
      }
    } else if (key == "synth.n") {
      cfg.synthetic.n = parse_size(key, value);
    } else if (key == "synth.d") {
      cfg.synthetic.d = parse_size(key, value);
    } else if (key == "synth.sep") {
      cfg.synthetic.class_sep = parse_double(key, value);
    } else if (key == "synth.noise") {
      cfg.synthetic.noise_sd = parse_double(key, value);
    } else if (key == "synth.seed") {
      cfg.synth_seed = parse_u64(key, value);
    } else if (key == "methods") {
      cfg.methods_csv = value;
    } else if (key == "train.hidden") {
      cfg.train.hidden_dims = parse_size_list(key, value);
    } else if (key == "train.lr") {
      cfg.train.learning_rate = parse_double(key, value);
    } else if (key == "train.weight_decay") {
      cfg.train.weight_decay = parse_double(key, value);
    } else if (key == "train.clip") {
      cfg.train.clip_norm = parse_double(key, value);
    } else if (key == "train.batch") {
      cfg.train.batch_size = parse_size(key, value);
    } else if (key == "train.epochs") {
      cfg.train.epochs = parse_size(key, value);
    } else if (key == "train.dropout") {
      cfg.train.dropout_p = parse_double(key, value);
    } else if (key == "train.optimizer") {
      if (value == "adamw") {
        cfg.train.optimizer = OptimizerKind::adamw;
      } else if (value == "sgd") {
        cfg.train.optimizer = OptimizerKind::sgd;
      } else {
        bad_value(key, value, "adamw|sgd");
      }
    } else if (key == "seeds.train") {
      cfg.comparison.n_seeds = parse_size(key, value);
    } else if (key == "seeds.canonical") {
      cfg.comparison.canonical_seeds = parse_u64_list(key, value);
    } else if (key == "split.test_frac") {
      cfg.comparison.test_frac = parse_double(key, value);
    } else if (key == "ci.resamples") {
      cfg.comparison.ci_resamples = parse_size(key, value);
    } else if (key == "ci.seed") {
      cfg.comparison.ci_seed = parse_u64(key, value);
    } else if (key == "jobs") {
      cfg.comparison.jobs = parse_size(key, value);
    } else if (key == "filter.enforce") {
      cfg.comparison.enforce_filter = parse_bool(key, value);
    } else if (key == "sweep.grid") {
      cfg.lambda_grid = parse_double_list(key, value);
    } else if (key == "sweep.tolerance") {
      cfg.select_tolerance = parse_double(key, value);
    } else if (key == "nscale.grid") {
      cfg.m_grid = parse_size_list(key, value);
    } else if (key == "bo.trials") {
      cfg.bo.trials = parse_size(key, value);
    } else if (key == "bo.warmup") {
      cfg.bo.warmup = parse_size(key, value);
    } else if (key == "bo.folds") {
      cfg.bo.folds = parse_size(key, value);
    } else if (key == "bo.delta") {
      cfg.bo.delta = parse_double(key, value);
    } else if (key == "bo.penalty") {
      cfg.bo.penalty = parse_double(key, value);
    } else if (key == "bo.lambda_lo") {
      cfg.bo.lambda_lo = parse_double(key, value);
    } else if (key == "bo.lambda_hi") {
      cfg.bo.lambda_hi = parse_double(key, value);
    } else if (key == "bo.fold_seed") {
      cfg.bo.fold_seed = parse_u64(key, value);
    } else if (key == "bo.grid_points") {
      cfg.bo.grid_points = parse_size(key, value);
    } else if (key == "bo.seeds") {
      cfg.bo_seeds = parse_size(key, value);
    } else if (key == "loop.budget") {
      cfg.loop_budget = parse_size(key, value);
    } else if (key == "loop.init") {
      cfg.loop_init = parse_size(key, value);
    } else if (key == "loop.trajectories") {
      cfg.loop_trajectories = parse_size(key, value);
    } else if (key == "loop.init_seed") {
      cfg.loop_init_seed = parse_u64(key, value);
    } else if (key == "triage.sizes") {
      cfg.triage_sizes = parse_size_list(key, value);
    } else if (key == "triage.subsets") {
      cfg.triage_subsets = parse_size(key, value);
    } else if (key == "triage.review_frac") {
      cfg.triage_review_frac = parse_double(key, value);
    } else if (key == "triage.seed") {
      cfg.triage_seed = parse_u64(key, value);
    } else if (key == "entropy.review_frac") {
      cfg.entropy_review_frac = parse_double(key, value);
    } else if (key == "entropy.seed_index") {
      cfg.entropy_seed_index = parse_size(key, value);
    } else if (key == "overlap.lambda") {
      cfg.overlap_lambda = parse_double(key, value);
    } else if (key == "out.dir") {
      cfg.out_dir = value;
    } else {
      throw std::invalid_argument("unknown config key '" + key + "'");
    }
  }

  cfg.synthetic.task = cfg.task;
  cfg.methods = parse_method_list(cfg.methods_csv, cfg.train);
  if (!cfg.dataset_path.empty() &&
      !std::filesystem::exists(cfg.dataset_path)) {
    throw std::invalid_argument("config key 'data.path': file does not exist: " +
                                cfg.dataset_path);
  }
  if (cfg.dataset_name.empty()) cfg.dataset_name = "dataset";
  return cfg;
}

Dataset load_config_dataset(const RunConfig& cfg) {
  if (!cfg.dataset_path.empty()) {
    return load_dataset(cfg.dataset_path, cfg.task, cfg.dataset_name);
  }
  Dataset ds = generate_synthetic(cfg.synthetic, cfg.synth_seed);
  ds.name = cfg.dataset_name;
  return ds;
}

}  // namespace churnkit
