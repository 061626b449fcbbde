#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "churnkit/dataio.hpp"
#include "churnkit/matrix.hpp"

namespace churnkit {

// Predictions of one method over a set of retrainings: predictions[s] holds
// seed s's output for every test row (n x 2 simplex rows for classification,
// n x 1 for regression).
struct PredictionSet {
  std::string method;
  Task task = Task::binary_classification;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> ids;
  std::vector<Matrix> predictions;
};

// Shape/simplex validation; throws std::invalid_argument on violations.
void validate_prediction_set(const PredictionSet& ps);

// All unordered seed pairs (i, j) with i < j, i-major order.
std::vector<std::pair<std::size_t, std::size_t>> seed_pairs(std::size_t n_seeds);

// Lowest index wins ties, so class 0 beats class 1 at exactly 0.5/0.5.
std::size_t argmax_row(std::span<const double> row);

// Fraction of rows whose argmax class differs between two prediction sets.
double argmax_churn(const Matrix& pa, const Matrix& pb);
// Mean symmetrised KL between matching rows.
double symkl_disagreement(const Matrix& pa, const Matrix& pb);

struct PairwiseChurn {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<double> pair_argmax_churn;        // per pair
  std::vector<double> pair_symkl;               // per pair; empty for regression
  std::vector<double> per_example_churn;        // flip fraction over pairs
  std::vector<double> per_example_flip_count;   // raw disagreeing-pair counts
  double mean_churn = 0.0;                      // equals mean of either view
  double mean_symkl = 0.0;
};

PairwiseChurn pairwise_churn(const PredictionSet& ps);

struct PerClassChurn {
  double class0 = 0.0;
  double class1 = 0.0;
};

// Mean per-example churn restricted to each true class; errors if a class is
// absent from the labels.
PerClassChurn per_class_churn(const PredictionSet& ps,
                              std::span<const double> labels);

enum class AggMetric { accuracy, precision, recall, f1, average_precision };

const char* agg_metric_name(AggMetric metric);

// One prediction matrix's aggregate metric against binary labels. Empty
// precision/recall denominators score 0 and set *empty_denominator when
// given; average precision throws if the labels hold no positives. ids drive
// the average-precision tie order (descending score, ascending id).
double aggregate_metric_value(const Matrix& pred, std::span<const double> labels,
                              std::span<const std::string> ids, AggMetric metric,
                              bool* empty_denominator = nullptr);

struct DriftResult {
  double mean_abs_pp = 0.0;        // mean |metric(s) - metric(s')| in pp
  bool empty_denominator = false;  // a seed had an empty precision/recall denominator
};

// Aggregate-metric drift across seed pairs. Precision/recall with an empty
// denominator score 0 and set the flag; average precision on an all-negative
// test set is an error.
DriftResult aggregate_drift(const PredictionSet& ps,
                            std::span<const double> labels, AggMetric metric);

struct RegressionChurn {
  double churn = 0.0;    // mean |f_s(x) - f_s'(x)| over pairs and rows
  double id_mae = 0.0;   // mean over seeds of test MAE
  double ratio = 0.0;    // churn / id_mae
};

RegressionChurn regression_churn(const PredictionSet& ps,
                                 std::span<const double> targets);

// Rank rows by positive-class probability (descending, ties by ascending id)
// and compare/top-slice. k must be in [1, n].
double topk_jaccard(const Matrix& pa, const Matrix& pb, std::size_t k,
                    std::span<const std::string> ids);
double topk_hit_rate(const Matrix& p, std::span<const double> labels,
                     std::size_t k, std::span<const std::string> ids);

// Shannon entropy -sum p log p with the probability floor.
double predictive_entropy(std::span<const double> p);

// Review-ordering diagnostic: sort rows by score (descending, ties by
// position), accumulate flip mass. recall[k] is the captured mass fraction
// after reviewing k rows; the area metrics integrate precision(coverage) =
// (captured mass fraction) / (rows reviewed), trapezoidally over coverage.
// aupc_norm divides by the perfect ranking's area so an oracle ordering
// scores 1.
struct FlipRecallCurve {
  std::vector<double> reviewed_frac;  // k/n for k = 0..n
  std::vector<double> recall;
  double aupc_raw = 0.0;
  double aupc_norm = 0.0;
};

FlipRecallCurve flip_recall_curve(std::span<const double> scores,
                                  std::span<const double> flip_mass);

// Recall after reviewing ceil(q * n) rows; q in (0, 1].
double recall_at(const FlipRecallCurve& curve, double q);

// CSV round-trip: header "seed,id,p0,p1" (classification) or "seed,id,yhat";
// rows grouped by seed with a consistent id order.
void save_prediction_set(const PredictionSet& ps, const std::string& path);
PredictionSet load_prediction_set(const std::string& path, Task task);

}  // namespace churnkit
