#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "churnkit/matrix.hpp"

namespace churnkit {

enum class Task { binary_classification, regression };

// Immutable example table. Classification targets are class indices stored as
// doubles (validated integral and in range at load time).
struct Dataset {
  std::string name;
  Task task = Task::binary_classification;
  std::vector<std::string> ids;
  Matrix features;               // n x dim
  std::vector<double> targets;   // n

  std::size_t n() const { return ids.size(); }
  std::size_t dim() const { return features.cols(); }
  std::size_t num_classes() const {
    return task == Task::binary_classification ? 2 : 0;
  }
};

// CSV with header "id,y,f0,...,f{d-1}". Distinct diagnostics for malformed
// header, non-numeric features, out-of-range or non-integer class labels, and
// duplicate ids.
Dataset load_dataset(const std::string& path, Task task,
                     const std::string& name = "");
void save_dataset(const Dataset& ds, const std::string& path);

// Canonical train/test partition. All indices refer to dataset rows.
struct Split {
  std::uint64_t canonical_seed = 0;
  IndexList train_pool;
  IndexList id_test;
};

// Deterministic shuffle of [0, n) keyed by canonical_seed; the first
// ceil(n * (1 - test_frac)) rows become the training pool, the rest the
// in-distribution test set.
Split make_canonical_split(const Dataset& ds, std::uint64_t canonical_seed,
                           double test_frac = 0.2);

// CSV with header "id,role", role in {train,test}; overrides the canonical
// split. Every dataset id must appear exactly once.
Split load_split_file(const Dataset& ds, const std::string& path);
void save_split_file(const Dataset& ds, const Split& split,
                     const std::string& path);

// One bootstrap resample: |pool| uniform draws from pool with replacement,
// stream ("bootstrap", seed). indices hold dataset-row values.
struct BootstrapSample {
  std::uint64_t seed = 0;
  IndexList indices;
};

BootstrapSample draw_bootstrap(const IndexList& pool, std::uint64_t seed);

struct OverlapStats {
  double shared_unique_frac = 0.0;  // |unique(a) ∩ unique(b)| / |pool|
  double unique_frac_a = 0.0;
  double unique_frac_b = 0.0;
};

// Both samples must come from the same pool (equal draw counts).
OverlapStats overlap_stats(const BootstrapSample& a, const BootstrapSample& b);

enum class FilterVerdict { pass, borderline, fail };

struct FilterOutcome {
  double erm_acc = 0.0;
  double majority_frac = 0.0;
  double gap_pp = 0.0;  // 100 * (erm_acc - majority_frac)
  std::size_t test_n = 0;
  FilterVerdict verdict = FilterVerdict::fail;
};

// Signal-vs-majority gate: pass if gap >= 5 pp and test_n >= 60; borderline if
// 3 <= gap < 5 pp and test_n >= 50; fail otherwise.
FilterOutcome majority_filter(double erm_acc, double majority_frac,
                              std::size_t test_n);

const char* filter_verdict_name(FilterVerdict v);

// Synthetic generators, fully keyed by (spec, seed).
//  - classification: two isotropic Gaussian clouds displaced by class_sep
//    along a random unit direction, labels alternating 0/1.
//  - regression: y = w.x + eps with w a random unit vector and
//    eps ~ N(0, noise_sd^2).
struct SyntheticSpec {
  std::size_t n = 200;
  std::size_t d = 10;
  double class_sep = 2.0;
  double noise_sd = 0.5;
  Task task = Task::binary_classification;
};

Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

}  // namespace churnkit
