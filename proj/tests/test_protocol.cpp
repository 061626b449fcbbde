#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "churnkit/protocol.hpp"
#include "churnkit/rng.hpp"

using namespace churnkit;

namespace {

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.hidden_dims = {8};
  cfg.epochs = 3;
  cfg.batch_size = 16;
  return cfg;
}

Dataset small_dataset(Task task = Task::binary_classification,
                      double sep = 2.5, std::uint64_t seed = 11) {
  SyntheticSpec spec;
  spec.n = 120;
  spec.d = 4;
  spec.class_sep = sep;
  spec.task = task;
  return generate_synthetic(spec, seed);
}

const MetricRow& find_row(const ComparisonResult& res, const std::string& method,
                          const std::string& replicate,
                          const std::string& metric) {
  for (const MetricRow& row : res.rows) {
    if (row.method == method && row.replicate == replicate &&
        row.metric == metric) {
      return row;
    }
  }
  FAIL("missing row ", method, "/", replicate, "/", metric);
  static MetricRow dummy;
  return dummy;
}

bool has_row(const ComparisonResult& res, const std::string& method,
             const std::string& replicate, const std::string& metric) {
  for (const MetricRow& row : res.rows) {
    if (row.method == method && row.replicate == replicate &&
        row.metric == metric) {
      return true;
    }
  }
  return false;
}

std::vector<MethodSpec> erm_plus_bagging() {
  MethodSpec erm;
  erm.kind = MethodKind::erm;
  erm.train = tiny_config();
  MethodSpec bag;
  bag.kind = MethodKind::bagging;
  bag.ensemble_size = 2;
  bag.train = tiny_config();
  return {erm, bag};
}

bool rows_equal(const std::vector<MetricRow>& a,
                const std::vector<MetricRow>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const MetricRow& x = a[i];
    const MetricRow& y = b[i];
    const bool same = x.dataset == y.dataset && x.n == y.n &&
                      x.method == y.method && x.replicate == y.replicate &&
                      x.metric == y.metric && x.mean == y.mean &&
                      x.lo == y.lo && x.hi == y.hi;
    if (!same) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("parallel_for fills every slot and propagates failures") {
  std::vector<std::size_t> out(200, 0);
  parallel_for(out.size(), 4, [&](std::size_t i) { out[i] = i + 1; });
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == i + 1);

  std::vector<std::size_t> serial(200, 0);
  parallel_for(serial.size(), 1, [&](std::size_t i) { serial[i] = i + 1; });
  CHECK(serial == out);

  CHECK_THROWS_WITH_AS(
      parallel_for(50, 4,
                   [&](std::size_t i) {
                     if (i == 17) throw std::runtime_error("boom 17");
                   }),
      "boom 17", std::runtime_error);
}

TEST_CASE("comparison reports per-replicate metrics with paired deltas") {
  Dataset ds = small_dataset();
  ComparisonOptions opts;
  opts.n_seeds = 3;
  opts.canonical_seeds = {99};
  opts.ci_resamples = 2000;
  ComparisonResult res = run_comparison(ds, erm_plus_bagging(), opts);

  CHECK(res.dataset == ds.name);
  CHECK(res.test_n == 24);
  REQUIRE(res.cells.size() == 2);
  REQUIRE(res.filters.size() == 1);

  // Cells are replicate-major in method order; 3 seeds give 3 pairs.
  CHECK(res.cells[0].method == "erm");
  CHECK(res.cells[1].method == "bagging_k2");
  CHECK(res.cells[0].churn.pairs.size() == 3);
  CHECK(res.cells[0].seed_accuracy.size() == 3);
  CHECK(res.cells[0].predictions.predictions.empty());

  // Churn row aggregates the per-pair values of the matching cell.
  const MetricRow& churn = find_row(res, "bagging_k2", "99", "churn");
  const auto& pair_churn = res.cells[1].churn.pair_argmax_churn;
  const double want =
      std::accumulate(pair_churn.begin(), pair_churn.end(), 0.0) /
      static_cast<double>(pair_churn.size());
  CHECK(churn.mean == doctest::Approx(want).epsilon(1e-12));
  CHECK(churn.lo <= churn.mean);
  CHECK(churn.mean <= churn.hi);

  // Accuracy row aggregates per-seed values.
  const MetricRow& acc = find_row(res, "erm", "99", "accuracy");
  const auto& seed_acc = res.cells[0].seed_accuracy;
  CHECK(acc.mean ==
        doctest::Approx(std::accumulate(seed_acc.begin(), seed_acc.end(), 0.0) /
                        3.0)
            .epsilon(1e-12));

  // Paired delta vs ERM recomputes from the cells.
  const MetricRow& dacc = find_row(res, "bagging_k2", "99",
                                   "delta_accuracy_vs_erm");
  double dsum = 0.0;
  for (std::size_t s = 0; s < 3; ++s) {
    dsum += res.cells[1].seed_accuracy[s] - res.cells[0].seed_accuracy[s];
  }
  CHECK(dacc.mean == doctest::Approx(dsum / 3.0).epsilon(1e-12));

  // ERM's delta against itself is identically zero, interval included.
  const MetricRow& zero = find_row(res, "erm", "99", "delta_churn_vs_erm");
  CHECK(zero.mean == 0.0);
  CHECK(zero.lo == 0.0);
  CHECK(zero.hi == 0.0);

  // Accuracy drift is the per-pair |difference| in percentage points.
  const MetricRow& drift = find_row(res, "erm", "99", "accuracy_drift_pp");
  double drift_sum = 0.0;
  for (const auto& [i, j] : res.cells[0].churn.pairs) {
    drift_sum += 100.0 * std::abs(res.cells[0].seed_accuracy[i] -
                                  res.cells[0].seed_accuracy[j]);
  }
  CHECK(drift.mean ==
        doctest::Approx(drift_sum /
                        static_cast<double>(res.cells[0].churn.pairs.size()))
            .epsilon(1e-12));
  CHECK(drift.lo <= drift.mean);
  CHECK(drift.mean <= drift.hi);

  // Per-class churn rows are points (lo == hi == mean).
  const MetricRow& cls0 = find_row(res, "erm", "99", "class0_churn");
  CHECK(cls0.lo == cls0.mean);
  CHECK(cls0.hi == cls0.mean);

  // Single replicate -> no "mean" rows.
  CHECK(!has_row(res, "erm", "mean", "accuracy"));

  // The same configuration reproduces bit-identical rows.
  ComparisonResult again = run_comparison(ds, erm_plus_bagging(), opts);
  CHECK(rows_equal(res.rows, again.rows));
}

TEST_CASE("comparison ERM baseline is auto-prepended and thread-count invariant") {
  Dataset ds = small_dataset();
  ComparisonOptions opts;
  opts.n_seeds = 2;
  opts.canonical_seeds = {99, 7};
  opts.ci_resamples = 1000;

  // Pass bagging only: an ERM baseline is prepended for the deltas.
  std::vector<MethodSpec> bag_only{erm_plus_bagging()[1]};
  ComparisonResult res = run_comparison(ds, bag_only, opts);
  REQUIRE(res.cells.size() == 4);  // 2 replicates x (ERM + bagging)
  CHECK(res.cells[0].method == "erm");
  CHECK(res.cells[1].method == "bagging_k2");
  CHECK(res.cells[0].canonical_seed == 99);
  CHECK(res.cells[2].canonical_seed == 7);
  CHECK(res.filters.size() == 2);

  // Two replicates -> "mean" aggregate rows exist for shared metrics.
  CHECK(has_row(res, "bagging_k2", "mean", "churn"));
  CHECK(has_row(res, "erm", "mean", "accuracy"));

  // Worker count must not change any number.
  ComparisonOptions par = opts;
  par.jobs = 4;
  ComparisonResult threaded = run_comparison(ds, bag_only, par);
  CHECK(rows_equal(res.rows, threaded.rows));

  // keep_predictions retains the raw sets.
  ComparisonOptions keep = opts;
  keep.keep_predictions = true;
  ComparisonResult kept = run_comparison(ds, bag_only, keep);
  CHECK(kept.cells[0].predictions.predictions.size() == 2);
}

TEST_CASE("comparison majority filter gates unlearnable datasets") {
  // Zero separation: ERM cannot beat the majority class.
  Dataset noise = small_dataset(Task::binary_classification, 0.0, 3);
  ComparisonOptions opts;
  opts.n_seeds = 2;
  opts.canonical_seeds = {99};
  opts.ci_resamples = 500;

  ComparisonResult res = run_comparison(noise, erm_plus_bagging(), opts);
  REQUIRE(res.filters.size() == 1);
  CHECK(res.filters[0].verdict == FilterVerdict::fail);

  ComparisonOptions enforce = opts;
  enforce.enforce_filter = true;
  CHECK_THROWS_WITH_AS(run_comparison(noise, erm_plus_bagging(), enforce),
                       doctest::Contains("majority-class filter"),
                       std::runtime_error);
}

TEST_CASE("regression comparison reports mae and regression churn") {
  Dataset ds = small_dataset(Task::regression);
  ComparisonOptions opts;
  opts.n_seeds = 3;
  opts.canonical_seeds = {99};
  opts.ci_resamples = 1000;
  ComparisonResult res = run_comparison(ds, erm_plus_bagging(), opts);

  CHECK(res.filters.empty());
  CHECK(has_row(res, "erm", "99", "mae"));
  CHECK(has_row(res, "bagging_k2", "99", "reg_churn"));
  CHECK(has_row(res, "bagging_k2", "99", "delta_mae_vs_erm"));
  CHECK(has_row(res, "bagging_k2", "99", "delta_reg_churn_vs_erm"));
  const MetricRow& ratio = find_row(res, "erm", "99", "churn_mae_ratio");
  CHECK(ratio.lo == ratio.mean);
  CHECK(ratio.mean > 0.0);
  CHECK(!has_row(res, "erm", "99", "accuracy"));
}

TEST_CASE("lambda selection applies the accuracy-tolerance rule") {
  auto point = [](double lambda, double acc) {
    SweepPoint p;
    p.lambda = lambda;
    p.accuracy.mean = acc;
    return p;
  };
  // Worked selection example: ERM 0.742, tolerance 0.02 -> threshold 0.722.
  std::vector<SweepPoint> sweep{point(1, 0.781),  point(3, 0.769),
                                point(10, 0.747), point(30, 0.706),
                                point(100, 0.613), point(300, 0.582)};
  std::optional<double> sel = select_lambda(sweep, 0.742, 0.02);
  REQUIRE(sel.has_value());
  CHECK(*sel == doctest::Approx(10.0));

  // All points above the threshold -> pick the largest lambda.
  std::optional<double> all = select_lambda(sweep, 0.50, 0.02);
  REQUIRE(all.has_value());
  CHECK(*all == doctest::Approx(300.0));

  // No point within tolerance -> no selection.
  CHECK(!select_lambda(sweep, 0.90, 0.02).has_value());

  // Boundary: exactly at threshold passes.
  std::vector<SweepPoint> edge{point(5, 0.722)};
  CHECK(select_lambda(edge, 0.742, 0.02).has_value());

  // Regression variant: largest lambda with mae <= erm + tolerance.
  std::vector<std::pair<double, double>> maes{
      {1.0, 0.50}, {10.0, 0.52}, {100.0, 0.58}};
  std::optional<double> reg = select_lambda_regression(maes, 0.50, 0.04);
  REQUIRE(reg.has_value());
  CHECK(*reg == doctest::Approx(10.0));
  CHECK(!select_lambda_regression(maes, 0.30, 0.04).has_value());
}

TEST_CASE("lambda sweep trains twins on a grid and selects an operating point") {
  Dataset ds = small_dataset();
  ComparisonOptions opts;
  opts.n_seeds = 2;
  opts.canonical_seeds = {99};
  opts.ci_resamples = 500;
  std::vector<double> grid{0.0, 10.0};
  LambdaSweepResult sweep = sweep_lambda(ds, grid, tiny_config(), opts);

  REQUIRE(sweep.points.size() == 2);
  CHECK(sweep.points[0].lambda == 0.0);
  CHECK(sweep.points[1].lambda == 10.0);
  CHECK(sweep.erm_accuracy.mean > 0.0);
  for (const SweepPoint& p : sweep.points) {
    CHECK(p.accuracy.lo <= p.accuracy.mean);
    CHECK(p.accuracy.mean <= p.accuracy.hi);
    CHECK(p.inter_head_symkl >= 0.0);
  }
  // The stored selection matches re-applying the rule.
  std::optional<double> manual =
      select_lambda(sweep.points, sweep.erm_accuracy.mean, 0.02);
  CHECK(sweep.selected == manual);

  LambdaSweepResult again = sweep_lambda(ds, grid, tiny_config(), opts);
  CHECK(again.points[1].accuracy.mean == sweep.points[1].accuracy.mean);
  CHECK(again.points[1].churn.lo == sweep.points[1].churn.lo);

  CHECK_THROWS_AS(sweep_lambda(small_dataset(Task::regression), grid,
                               tiny_config(), opts),
                  std::invalid_argument);
}

TEST_CASE("log-log slope recovers power laws") {
  std::vector<double> xs{10.0, 100.0, 1000.0};
  std::vector<double> pow_law(3), flat(3);
  for (std::size_t i = 0; i < 3; ++i) {
    pow_law[i] = 2.0 * std::pow(xs[i], -0.2);
    flat[i] = 0.7;
  }
  CHECK(loglog_slope(xs, pow_law) == doctest::Approx(-0.2).epsilon(1e-12));
  CHECK(loglog_slope(xs, flat) == doctest::Approx(0.0));

  std::vector<double> bad_y{1.0, -2.0, 3.0};
  CHECK_THROWS_AS(loglog_slope(xs, bad_y), std::invalid_argument);
  std::vector<double> one_x{5.0};
  std::vector<double> one_y{1.0};
  CHECK_THROWS_AS(loglog_slope(one_x, one_y), std::invalid_argument);
  std::vector<double> same_x{5.0, 5.0};
  std::vector<double> ys2{1.0, 2.0};
  CHECK_THROWS_AS(loglog_slope(same_x, ys2), std::invalid_argument);
}

TEST_CASE("training-size scaling evaluates nested prefix pools") {
  Dataset ds = small_dataset();
  ComparisonOptions opts;
  opts.n_seeds = 2;
  opts.canonical_seeds = {99};
  opts.ci_resamples = 500;
  std::vector<std::size_t> m_grid{24, 48, 96};
  ScalingResult res = n_scaling(ds, m_grid, tiny_config(), opts);

  REQUIRE(res.points.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(res.points[i].m == m_grid[i]);
    CHECK(res.points[i].churn.mean >= 0.0);
    CHECK(res.points[i].symkl.mean >= 0.0);
  }
  // Slopes recompute from the point means when all values are positive.
  std::vector<double> xs{24.0, 48.0, 96.0};
  std::vector<double> churn_means, symkl_means;
  bool positive = true;
  for (const ScalingPoint& p : res.points) {
    churn_means.push_back(p.churn.mean);
    symkl_means.push_back(p.symkl.mean);
    positive = positive && p.churn.mean > 0.0 && p.symkl.mean > 0.0;
  }
  if (positive) {
    CHECK(res.slope_churn ==
          doctest::Approx(loglog_slope(xs, churn_means)).epsilon(1e-12));
    CHECK(res.slope_symkl ==
          doctest::Approx(loglog_slope(xs, symkl_means)).epsilon(1e-12));
  }

  std::vector<std::size_t> too_big{200};
  CHECK_THROWS_AS(n_scaling(ds, too_big, tiny_config(), opts),
                  std::invalid_argument);
}

TEST_CASE("triage convergence collapses to the identity at full subsets") {
  // Hand-built four-seed set with known flips.
  PredictionSet ps;
  ps.method = "hand";
  ps.task = Task::binary_classification;
  ps.seeds = {0, 1, 2, 3};
  const std::size_t n = 8;
  for (std::size_t i = 0; i < n; ++i) {
    ps.ids.push_back("ex-" + std::to_string(i));
  }
  Rng rng = Rng::stream("test-triage", {5});
  for (std::size_t s = 0; s < 4; ++s) {
    Matrix m(n, 2);
    for (std::size_t i = 0; i < n; ++i) {
      // Rows 0..3 flip across seeds, rows 4..7 are stable class 1.
      double p1 = i < 4 ? (rng.uniform01() < 0.5 ? 0.2 : 0.8) : 0.9;
      m(i, 0) = 1.0 - p1;
      m(i, 1) = p1;
    }
    ps.predictions.push_back(std::move(m));
  }
  // Ensure at least one genuine flip among rows 0..3.
  ps.predictions[0](0, 0) = 0.9;
  ps.predictions[0](0, 1) = 0.1;
  ps.predictions[1](0, 0) = 0.1;
  ps.predictions[1](0, 1) = 0.9;

  TriageResult res = triage_convergence(ps, {2, 4}, 6, 0.5, 3);
  CHECK(res.review_frac == 0.5);
  REQUIRE(res.rows.size() == 2);
  CHECK(res.rows[0].subset_size == 2);
  CHECK(res.rows[0].n_subsets == 6);
  CHECK(res.rows[0].mean_recall >= 0.0);
  CHECK(res.rows[0].mean_recall <= 1.0);

  // K' == S: the subset ranking IS the gold ranking.
  CHECK(res.rows[1].subset_size == 4);
  CHECK(res.rows[1].n_subsets == 1);
  CHECK(res.rows[1].mean_recall == doctest::Approx(res.gold_recall).epsilon(1e-12));

  TriageResult again = triage_convergence(ps, {2, 4}, 6, 0.5, 3);
  CHECK(again.rows[0].mean_recall == res.rows[0].mean_recall);

  // All-stable predictions leave the ranking undefined.
  PredictionSet stable = ps;
  for (Matrix& m : stable.predictions) {
    for (std::size_t i = 0; i < n; ++i) {
      m(i, 0) = 0.1;
      m(i, 1) = 0.9;
    }
  }
  CHECK_THROWS_AS(triage_convergence(stable, {2, 4}, 6, 0.5, 3),
                  std::invalid_argument);
  CHECK_THROWS_AS(triage_convergence(ps, {1, 4}, 6, 0.5, 3),
                  std::invalid_argument);
  CHECK_THROWS_AS(triage_convergence(ps, {2, 9}, 6, 0.5, 3),
                  std::invalid_argument);
}

TEST_CASE("two-seed churn scores beat entropy on engineered flips") {
  // Seeds 0/1 disagree exactly on rows 0..2; entropy is flat everywhere.
  PredictionSet ps;
  ps.method = "hand";
  ps.task = Task::binary_classification;
  ps.seeds = {0, 1};
  const std::size_t n = 10;
  for (std::size_t i = 0; i < n; ++i) ps.ids.push_back("r" + std::to_string(i));
  Matrix m0(n, 2), m1(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const bool flip = i < 3;
    m0(i, 0) = 0.3;
    m0(i, 1) = 0.7;
    m1(i, 0) = flip ? 0.7 : 0.3;
    m1(i, 1) = flip ? 0.3 : 0.7;
  }
  ps.predictions = {m0, m1};

  EntropyChurnResult res = entropy_vs_churn(ps, 0, 0.3);
  REQUIRE(res.rows.size() == 2);
  CHECK(res.rows[0].score_name == "churn_k2");
  CHECK(res.rows[1].score_name == "entropy");
  // The churn score reviews the three flipped rows first: full recall.
  CHECK(res.rows[0].recall_at_frac == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(res.rows[0].aupc_norm == doctest::Approx(1.0).epsilon(1e-12));
  // Flat entropy cannot find them faster than the diagonal.
  CHECK(res.rows[1].recall_at_frac <= res.rows[0].recall_at_frac);
  CHECK(res.rows[0].aupc_norm >= res.rows[1].aupc_norm);
}

TEST_CASE("overlap spectrum orders loader sharing and flags collapse") {
  Dataset ds = small_dataset();
  ComparisonOptions opts;
  opts.n_seeds = 2;
  opts.canonical_seeds = {99};
  opts.ci_resamples = 500;
  std::vector<OverlapRow> rows =
      overlap_spectrum(ds, 5.0, tiny_config(), opts,
                       {OverlapMode::disjoint, OverlapMode::bootstrap,
                        OverlapMode::shared});

  REQUIRE(rows.size() == 3);
  CHECK(rows[0].mode == OverlapMode::disjoint);
  CHECK(rows[0].measured_overlap == 0.0);
  CHECK(rows[1].measured_overlap ==
        doctest::Approx(0.4).epsilon(0.25));
  CHECK(rows[2].measured_overlap ==
        doctest::Approx(0.632).epsilon(0.15));
  CHECK(rows[0].measured_overlap < rows[1].measured_overlap);
  CHECK(rows[1].measured_overlap < rows[2].measured_overlap);

  for (const OverlapRow& row : rows) {
    CHECK(row.collapse ==
          (row.erm_accuracy - row.twin_accuracy > 0.05));
    CHECK(row.delta_churn.lo <= row.delta_churn.hi);
  }
}

TEST_CASE("footprint table matches the canonical accounting") {
  MethodSpec erm;
  erm.kind = MethodKind::erm;
  FootprintRow r = compute_footprint(erm);
  CHECK(r.method == "ERM");
  CHECK(r.train_forwards_per_step == 1);
  CHECK(r.train_backwards_per_step == 1);
  CHECK(!r.joint_backward);
  CHECK(r.test_models == 1);
  CHECK(r.wallclock == "1x");

  MethodSpec deep;
  deep.kind = MethodKind::deep_ensemble;
  deep.ensemble_size = 5;
  r = compute_footprint(deep);
  CHECK(r.train_forwards_per_step == 5);
  CHECK(r.train_backwards_per_step == 5);
  CHECK(r.test_models == 5);
  CHECK(r.wallclock == "5x (sequential)");

  MethodSpec twin;
  twin.kind = MethodKind::twin;
  twin.lambda = 300.0;
  r = compute_footprint(twin);
  CHECK(r.method == "Twin-bootstrap (K=2, joint)");
  CHECK(r.train_forwards_per_step == 4);
  CHECK(r.train_backwards_per_step == 1);
  CHECK(r.joint_backward);
  CHECK(r.test_models == 2);
  CHECK(r.wallclock == "~2x");

  std::vector<FootprintRow> table = footprint_table();
  REQUIRE(table.size() == 5);
  CHECK(table[0].method == "ERM");
  CHECK(table[1].method == "Deep ensemble (K=5)");
  CHECK(table[2].method == "Bagging (K=2)");
  CHECK(table[3].method == "Bagging (K=5)");
  CHECK(table[4].method == "Twin-bootstrap (K=2, joint)");
}

TEST_CASE("predict_method_on_split trains the first replicate's layout") {
  Dataset ds = small_dataset();
  ComparisonOptions opts;
  opts.n_seeds = 2;
  opts.canonical_seeds = {99, 7};
  MethodSpec erm;
  erm.kind = MethodKind::erm;
  erm.train = tiny_config();
  PredictionSet ps = predict_method_on_split(ds, erm, opts);
  CHECK(ps.task == Task::binary_classification);
  REQUIRE(ps.seeds.size() == 2);
  CHECK(ps.seeds[0] == seed_combine(99, 0));
  CHECK(ps.seeds[1] == seed_combine(99, 1));
  CHECK(ps.ids.size() == 24);
  CHECK_NOTHROW(validate_prediction_set(ps));
}
