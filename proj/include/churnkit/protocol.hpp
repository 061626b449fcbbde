#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "churnkit/dataio.hpp"
#include "churnkit/methods.hpp"
#include "churnkit/metrics.hpp"
#include "churnkit/stats.hpp"

namespace churnkit {

// Runs fn(0..n-1) on a pool of `jobs` worker threads. Each index writes only
// its own output slot, so any worker count (including 1) produces identical
// results; the first exception is rethrown after all workers join.
void parallel_for(std::size_t n, std::size_t jobs,
                  const std::function<void(std::size_t)>& fn);

// Seed/replicate layout shared by every study.
struct ComparisonOptions {
  std::size_t n_seeds = 10;                         // retrainings per cell
  std::vector<std::uint64_t> canonical_seeds{99, 7, 42};
  double test_frac = 0.2;
  std::size_t ci_resamples = 10000;
  std::uint64_t ci_seed = 0;
  std::size_t jobs = 1;
  bool enforce_filter = false;   // throw when the majority filter fails
  bool keep_predictions = false; // retain raw prediction sets in the cells
};

// One output-table row: replicate is the canonical seed rendered as text, or
// "mean" for the across-replicate aggregate. Point metrics without a
// resampled interval carry lo == hi == mean.
struct MetricRow {
  std::string dataset;
  std::size_t n = 0;  // dataset rows
  std::string method;
  std::string replicate;
  std::string metric;
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

// One (method, replicate) cell. All methods within a replicate share the
// identical split, test id order, and (s, s') pair ordering, so paired
// deltas subtract matching entries.
struct ComparisonCell {
  std::string method;
  std::uint64_t canonical_seed = 0;
  PredictionSet predictions;  // cleared unless keep_predictions
  PairwiseChurn churn;
  std::vector<double> seed_accuracy;  // classification; one per train seed
  std::vector<double> seed_mae;       // regression; one per train seed
};

struct ComparisonResult {
  std::string dataset;
  std::size_t test_n = 0;
  std::vector<MetricRow> rows;
  std::vector<ComparisonCell> cells;    // replicate-major, then method order
  std::vector<FilterOutcome> filters;   // one per replicate (ERM-based);
                                        // classification only
};

// Trains one method across the train-seed layout on the FIRST canonical
// split and returns its test-set predictions (seeds are the derived per-seed
// train seeds). Convenience entry for the triage/entropy studies.
PredictionSet predict_method_on_split(const Dataset& ds, const MethodSpec& spec,
                                      const ComparisonOptions& opts = {});

// The canonical method comparison: per replicate, split once; per method and
// train seed, retrain and predict the shared test set; report churn / sym-KL
// over all seed pairs, accuracy over seeds, aggregate drift, and paired
// deltas against ERM, each with percentile-bootstrap intervals. An ERM
// baseline is prepended when the method list lacks one (reusing the first
// method's training config). Train seed s of replicate c is
// seed_combine(c, s), decorrelating replicates end to end.
ComparisonResult run_comparison(const Dataset& ds,
                                const std::vector<MethodSpec>& methods,
                                const ComparisonOptions& opts = {});

// One twin operating point of the consistency-weight sweep.
struct SweepPoint {
  double lambda = 0.0;
  CiReport accuracy;              // over train seeds (2-head ensemble)
  CiReport churn;                 // over seed pairs
  CiReport symkl;                 // over seed pairs
  double inter_head_symkl = 0.0;  // test sym-KL between the two heads,
                                  // mean over train seeds
};

struct LambdaSweepResult {
  CiReport erm_accuracy;          // same split, same seeds
  std::vector<SweepPoint> points; // grid order
  std::optional<double> selected; // by the accuracy-tolerance rule
};

// Accuracy/stability sweep over a lambda grid on the FIRST canonical seed
// only. Lambda 0 is allowed in the grid (it degrades twin to bagging K=2)
// and participates in selection like any other point.
LambdaSweepResult sweep_lambda(const Dataset& ds,
                               const std::vector<double>& lambda_grid,
                               const TrainConfig& cfg,
                               const ComparisonOptions& opts = {});

// Largest lambda whose accuracy stays within `tolerance` of the baseline:
// acc(lambda) >= erm_acc - tolerance. nullopt when every point fails.
std::optional<double> select_lambda(const std::vector<SweepPoint>& sweep,
                                    double erm_acc, double tolerance = 0.02);

// Regression rule variant over (lambda, mae) pairs: largest lambda with
// mae <= erm_mae + tolerance.
std::optional<double> select_lambda_regression(
    std::span<const std::pair<double, double>> lambda_mae, double erm_mae,
    double tolerance = 0.04);

// Ordinary least squares slope of ln(y) on ln(x); requires >= 2 distinct
// positive x and positive y.
double loglog_slope(std::span<const double> xs, std::span<const double> ys);

struct ScalingPoint {
  std::size_t m = 0;  // training-pool prefix size
  CiReport churn;
  CiReport symkl;
};

struct ScalingResult {
  std::vector<ScalingPoint> points;
  double slope_symkl = 0.0;  // d ln(mean symkl) / d ln(M)
  double slope_churn = 0.0;
};

// ERM churn as a function of training-set size: pools are nested prefixes of
// the first canonical seed's shuffled training pool, so pool(M1) is a prefix
// of pool(M2) whenever M1 < M2.
ScalingResult n_scaling(const Dataset& ds, const std::vector<std::size_t>& m_grid,
                        const TrainConfig& cfg,
                        const ComparisonOptions& opts = {});

struct TriageRow {
  std::size_t subset_size = 0;  // K'
  std::size_t n_subsets = 0;
  double mean_recall = 0.0;     // recall at review_frac, mean over subsets
};

struct TriageResult {
  double review_frac = 0.3;
  double gold_recall = 0.0;  // the full-seed ranking's own recall
  std::vector<TriageRow> rows;
};

// How quickly subset-scored churn rankings converge to the full-seed gold
// ranking: gold flip mass counts disagreeing pairs over all seeds; each K'
// draws n_subsets seed subsets (stream ("triage", {subset_seed, K', j})),
// ranks examples by subset flip counts, and reads recall at review_frac
// against the gold mass. K' equal to the seed count collapses to the single
// identity subset.
TriageResult triage_convergence(const PredictionSet& ps,
                                const std::vector<std::size_t>& subset_sizes =
                                    {2, 3, 5, 10},
                                std::size_t n_subsets = 30,
                                double review_frac = 0.3,
                                std::uint64_t subset_seed = 0);

struct ScoreComparisonRow {
  std::string score_name;
  double recall_at_frac = 0.0;
  double aupc_raw = 0.0;
  double aupc_norm = 0.0;
};

struct EntropyChurnResult {
  double review_frac = 0.1;
  std::vector<ScoreComparisonRow> rows;  // "churn_k2" then "entropy"
};

// Cheap-score shootout for flip triage: a two-seed churn score (pair of the
// first two seeds) versus the predictive entropy of one designated seed's
// predictions, both evaluated against the all-pairs gold flip mass.
EntropyChurnResult entropy_vs_churn(const PredictionSet& ps,
                                    std::size_t entropy_seed_index = 0,
                                    double review_frac = 0.1);

struct OverlapRow {
  OverlapMode mode = OverlapMode::bootstrap;
  double measured_overlap = 0.0;  // loader shared-unique fraction, mean
                                  // over train seeds
  double erm_accuracy = 0.0;      // mean over train seeds
  double twin_accuracy = 0.0;
  CiReport delta_churn;           // twin - ERM, paired over seed pairs
  CiReport delta_accuracy;        // twin - ERM, paired over seeds
  bool collapse = false;          // accuracy drop > 5 pp
};

// Twin behaviour across the loader-overlap spectrum (disjoint halves,
// independent bootstraps, shared batches) at a fixed lambda, on the first
// canonical seed, against the matching ERM baseline.
std::vector<OverlapRow> overlap_spectrum(
    const Dataset& ds, double lambda, const TrainConfig& cfg,
    const ComparisonOptions& opts = {},
    const std::vector<OverlapMode>& modes = {OverlapMode::disjoint,
                                             OverlapMode::bootstrap,
                                             OverlapMode::shared});

// Static per-training-step cost accounting.
struct FootprintRow {
  std::string method;
  std::size_t train_forwards_per_step = 1;
  std::size_t train_backwards_per_step = 1;
  bool joint_backward = false;  // one backward updates every member
  std::size_t test_models = 1;  // trained networks queried per prediction
  std::string wallclock;        // sequential-training multiplier vs ERM
};

FootprintRow compute_footprint(const MethodSpec& spec);

// The five canonical accounting rows: ERM, deep ensemble K=5, bagging K=2,
// bagging K=5, twin-bootstrap (K=2, joint).
std::vector<FootprintRow> footprint_table();

}  // namespace churnkit
