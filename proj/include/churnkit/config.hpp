#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "churnkit/bo.hpp"
#include "churnkit/dataio.hpp"
#include "churnkit/methods.hpp"
#include "churnkit/protocol.hpp"

namespace churnkit {

// Flat key=value configuration ('#' comments and blank lines ignored; later
// assignments win, which is also how command-line -D overrides compose).
using ConfigMap = std::map<std::string, std::string>;

ConfigMap read_config_file(const std::string& path);

// FNV-1a 64 over the canonical sorted "key=value\n" serialisation; the hex
// form is stamped into every output artifact.
std::uint64_t config_hash(const ConfigMap& kv);
std::string config_hash_hex(const ConfigMap& kv);

// Method token grammar: kind[:param][@mode].
//   erm | swa | mc[:passes] | deep[:K] | bagging[:K] | twin[:lambda][@mode]
// A bare trailing integer is accepted as sugar ("bagging5" == "bagging:5");
// mode is one of disjoint|bootstrap|shared and only valid for twin.
MethodSpec parse_method_token(const std::string& token, const TrainConfig& base);
std::vector<MethodSpec> parse_method_list(const std::string& csv,
                                          const TrainConfig& base);

// Everything a subcommand can need, with defaults filled.
struct RunConfig {
  // Data source: a CSV path, or the synthetic generator when path is empty.
  std::string dataset_path;
  std::string dataset_name = "synthetic";
  Task task = Task::binary_classification;
  SyntheticSpec synthetic;
  std::uint64_t synth_seed = 0;

  std::string methods_csv = "erm";
  std::vector<MethodSpec> methods;
  TrainConfig train;
  ComparisonOptions comparison;

  std::vector<double> lambda_grid{1, 3, 10, 30, 100, 300};
  double select_tolerance = 0.02;

  std::vector<std::size_t> m_grid;

  BoLambdaOptions bo;
  std::size_t bo_seeds = 3;  // train seeds whose lambda* is medianed

  std::size_t loop_budget = 10;
  std::size_t loop_init = 50;
  std::size_t loop_trajectories = 10;
  std::uint64_t loop_init_seed = 0;

  std::vector<std::size_t> triage_sizes{2, 3, 5, 10};
  std::size_t triage_subsets = 30;
  double triage_review_frac = 0.3;
  std::uint64_t triage_seed = 0;

  double entropy_review_frac = 0.1;
  std::size_t entropy_seed_index = 0;

  double overlap_lambda = 30.0;

  std::string out_dir = ".";

  ConfigMap raw;  // the validated key=value map this config was built from
};

// Validates every key against the known schema (unknown keys are errors that
// name the offending key), parses the typed values, and loads the dataset
// source lazily (the path's existence is checked here).
RunConfig make_run_config(const ConfigMap& kv);

// Materialises the configured dataset: loads the CSV when a path is set,
// otherwise generates the synthetic dataset from (spec, synth_seed).
Dataset load_config_dataset(const RunConfig& cfg);

}  // namespace churnkit
