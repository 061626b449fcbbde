#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "churnkit/metrics.hpp"
#include "churnkit/rng.hpp"

using namespace churnkit;

namespace {

Matrix row_matrix(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(rows.size(), rows.begin()->size());
  std::size_t r = 0;
  for (const auto& row : rows) {
    std::size_t c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

PredictionSet random_classification_set(std::size_t n_seeds, std::size_t n,
                                        std::uint64_t seed) {
  PredictionSet ps;
  ps.method = "random";
  ps.task = Task::binary_classification;
  Rng rng = Rng::stream("test-ps", {seed});
  for (std::size_t s = 0; s < n_seeds; ++s) ps.seeds.push_back(100 + s);
  for (std::size_t i = 0; i < n; ++i) {
    ps.ids.push_back("ex-" + std::to_string(1000 + i));
  }
  for (std::size_t s = 0; s < n_seeds; ++s) {
    Matrix m(n, 2);
    for (std::size_t i = 0; i < n; ++i) {
      const double p = rng.uniform01();
      m(i, 0) = p;
      m(i, 1) = 1.0 - p;
    }
    ps.predictions.push_back(std::move(m));
  }
  return ps;
}

// From per-row class-1 probabilities (rows of equal length per seed).
PredictionSet set_from_p1(std::initializer_list<std::initializer_list<double>> seeds_p1) {
  PredictionSet ps;
  ps.method = "hand";
  ps.task = Task::binary_classification;
  const std::size_t n = seeds_p1.begin()->size();
  for (std::size_t i = 0; i < n; ++i) {
    ps.ids.push_back(std::string(1, static_cast<char>('a' + i)));
  }
  std::size_t s = 0;
  for (const auto& row : seeds_p1) {
    ps.seeds.push_back(s++);
    Matrix m(n, 2);
    std::size_t i = 0;
    for (double p1 : row) {
      m(i, 0) = 1.0 - p1;
      m(i, 1) = p1;
      ++i;
    }
    ps.predictions.push_back(std::move(m));
  }
  return ps;
}

}  // namespace

TEST_CASE("prediction set validation rejects malformed shapes") {
  PredictionSet ps = random_classification_set(3, 5, 1);
  CHECK_NOTHROW(validate_prediction_set(ps));

  PredictionSet missing = ps;
  missing.predictions.pop_back();
  CHECK_THROWS_AS(validate_prediction_set(missing), std::invalid_argument);

  PredictionSet short_rows = ps;
  short_rows.predictions[0] = Matrix(4, 2);
  CHECK_THROWS_AS(validate_prediction_set(short_rows), std::invalid_argument);

  PredictionSet off_simplex = ps;
  off_simplex.predictions[1](2, 0) = 0.9;
  off_simplex.predictions[1](2, 1) = 0.9;
  CHECK_THROWS_AS(validate_prediction_set(off_simplex), std::invalid_argument);

  PredictionSet negative = ps;
  negative.predictions[1](2, 0) = -0.1;
  negative.predictions[1](2, 1) = 1.1;
  CHECK_THROWS_AS(validate_prediction_set(negative), std::invalid_argument);

  PredictionSet reg = ps;
  reg.task = Task::regression;  // matrices still have two columns
  CHECK_THROWS_AS(validate_prediction_set(reg), std::invalid_argument);
}

TEST_CASE("seed pairs enumerate i-major unordered pairs") {
  auto pairs = seed_pairs(10);
  CHECK(pairs.size() == 45);
  CHECK(pairs.front() == std::pair<std::size_t, std::size_t>{0, 1});
  CHECK(pairs.back() == std::pair<std::size_t, std::size_t>{8, 9});
  // i-major: (0,1)..(0,9),(1,2)...
  CHECK(pairs[9] == std::pair<std::size_t, std::size_t>{1, 2});
  for (auto [i, j] : pairs) CHECK(i < j);
  CHECK(seed_pairs(1).empty());
  CHECK(seed_pairs(2).size() == 1);
}

TEST_CASE("argmax breaks ties toward the lower class index") {
  std::vector<double> tie{0.5, 0.5};
  CHECK(argmax_row(tie) == 0);
  std::vector<double> c1{0.4999, 0.5001};
  CHECK(argmax_row(c1) == 1);
  std::vector<double> three{0.2, 0.5, 0.3};
  CHECK(argmax_row(three) == 1);
}

TEST_CASE("pairwise disagreement on two matrices") {
  Matrix pa = row_matrix({{0.9, 0.1}, {0.2, 0.8}, {0.5, 0.5}});
  Matrix pb = row_matrix({{0.1, 0.9}, {0.3, 0.7}, {0.4, 0.6}});
  // Rows flip: 0 (0 vs 1), keep row 1 (1 vs 1), flip row 2 (tie->0 vs 1).
  CHECK(argmax_churn(pa, pb) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

  Matrix q = row_matrix({{0.25, 0.75}});
  Matrix p = row_matrix({{0.5, 0.5}});
  CHECK(symkl_disagreement(p, q) ==
        doctest::Approx(0.1373265360835137).epsilon(1e-12));
}

TEST_CASE("pairwise churn equals a brute-force pair enumeration") {
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    PredictionSet ps = random_classification_set(6, 30, 10 + trial);
    PairwiseChurn pc = pairwise_churn(ps);
    const auto pairs = seed_pairs(6);
    REQUIRE(pc.pairs == pairs);
    REQUIRE(pc.pair_argmax_churn.size() == pairs.size());
    REQUIRE(pc.per_example_churn.size() == 30);

    std::vector<std::size_t> cls(6 * 30);
    for (std::size_t s = 0; s < 6; ++s) {
      for (std::size_t i = 0; i < 30; ++i) {
        cls[s * 30 + i] = argmax_row(ps.predictions[s].row(i));
      }
    }

    double pair_sum = 0.0;
    for (std::size_t t = 0; t < pairs.size(); ++t) {
      auto [i, j] = pairs[t];
      std::size_t flips = 0;
      for (std::size_t r = 0; r < 30; ++r) {
        flips += cls[i * 30 + r] != cls[j * 30 + r];
      }
      const double brute = static_cast<double>(flips) / 30.0;
      CHECK(pc.pair_argmax_churn[t] == brute);
      CHECK(pc.pair_symkl[t] ==
            doctest::Approx(symkl_disagreement(ps.predictions[i],
                                               ps.predictions[j]))
                .epsilon(1e-14));
      pair_sum += brute;
    }

    double example_sum = 0.0;
    for (std::size_t r = 0; r < 30; ++r) {
      std::size_t flips = 0;
      for (auto [i, j] : pairs) flips += cls[i * 30 + r] != cls[j * 30 + r];
      CHECK(pc.per_example_flip_count[r] == static_cast<double>(flips));
      const double frac = static_cast<double>(flips) / static_cast<double>(pairs.size());
      CHECK(pc.per_example_churn[r] == doctest::Approx(frac).epsilon(1e-15));
      example_sum += frac;
    }

    // The two views share one grand mean.
    CHECK(pc.mean_churn ==
          doctest::Approx(pair_sum / static_cast<double>(pairs.size()))
              .epsilon(1e-12));
    CHECK(pc.mean_churn ==
          doctest::Approx(example_sum / 30.0).epsilon(1e-12));
  }
}

TEST_CASE("per-class churn splits by the true label") {
  PredictionSet ps = set_from_p1({{0.1, 0.2, 0.9, 0.8},
                                  {0.9, 0.1, 0.8, 0.9}});
  // Argmax flips: a yes, b no, c no, d no.
  std::vector<double> labels{0.0, 0.0, 1.0, 1.0};
  PerClassChurn pcc = per_class_churn(ps, labels);
  CHECK(pcc.class0 == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(pcc.class1 == doctest::Approx(0.0));

  std::vector<double> one_class{0.0, 0.0, 0.0, 0.0};
  CHECK_THROWS_AS(per_class_churn(ps, one_class), std::invalid_argument);
}

TEST_CASE("aggregate metrics match hand counts") {
  // Truth {1,1,1,0}; predictions {1,0,0,0}: tp=1, fp=0, fn=2.
  Matrix pred = row_matrix(
      {{0.1, 0.9}, {0.8, 0.2}, {0.7, 0.3}, {0.6, 0.4}});
  std::vector<double> labels{1.0, 1.0, 1.0, 0.0};
  std::vector<std::string> ids{"a", "b", "c", "d"};

  CHECK(aggregate_metric_value(pred, labels, ids, AggMetric::accuracy) ==
        doctest::Approx(0.5).epsilon(1e-15));
  CHECK(aggregate_metric_value(pred, labels, ids, AggMetric::precision) ==
        doctest::Approx(1.0).epsilon(1e-15));
  CHECK(aggregate_metric_value(pred, labels, ids, AggMetric::recall) ==
        doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(aggregate_metric_value(pred, labels, ids, AggMetric::f1) ==
        doctest::Approx(0.5).epsilon(1e-12));

  // AP over scores {0.9, 0.2, 0.3, 0.4} with positives a, b, c:
  // order a(hit 1/1), d, c(hit 2/3), b(hit 3/4).
  CHECK(aggregate_metric_value(pred, labels, ids, AggMetric::average_precision) ==
        doctest::Approx((1.0 + 2.0 / 3.0 + 3.0 / 4.0) / 3.0).epsilon(1e-12));

  // Tied scores order by ascending id.
  Matrix tied = row_matrix({{0.1, 0.9}, {0.1, 0.9}});
  std::vector<double> tl{0.0, 1.0};
  std::vector<std::string> tie_ids{"a", "b"};
  CHECK(aggregate_metric_value(tied, tl, tie_ids,
                               AggMetric::average_precision) ==
        doctest::Approx(0.5).epsilon(1e-15));

  // Empty denominators: no predicted positives / no true positives.
  Matrix all_neg = row_matrix({{0.9, 0.1}, {0.8, 0.2}});
  std::vector<double> pos_labels{1.0, 1.0};
  bool empty = false;
  CHECK(aggregate_metric_value(all_neg, pos_labels, tie_ids,
                               AggMetric::precision, &empty) == 0.0);
  CHECK(empty);
  std::vector<double> neg_labels{0.0, 0.0};
  empty = false;
  CHECK(aggregate_metric_value(all_neg, neg_labels, tie_ids, AggMetric::recall,
                               &empty) == 0.0);
  CHECK(empty);
  CHECK_THROWS_AS(aggregate_metric_value(all_neg, neg_labels, tie_ids,
                                         AggMetric::average_precision),
                  std::invalid_argument);

  CHECK(std::string(agg_metric_name(AggMetric::accuracy)) == "accuracy");
  CHECK(std::string(agg_metric_name(AggMetric::average_precision)) == "ap");
}

TEST_CASE("aggregate drift reports mean absolute pp differences") {
  // Seed 0 accuracy 1.0, seed 1 accuracy 0.5 -> drift 50 pp.
  PredictionSet ps = set_from_p1({{0.9, 0.1}, {0.9, 0.9}});
  std::vector<double> labels{1.0, 0.0};
  DriftResult d = aggregate_drift(ps, labels, AggMetric::accuracy);
  CHECK(d.mean_abs_pp == doctest::Approx(50.0).epsilon(1e-12));
  CHECK(!d.empty_denominator);
}

TEST_CASE("regression churn relates cross-seed drift to in-distribution error") {
  PredictionSet ps;
  ps.method = "reg";
  ps.task = Task::regression;
  ps.seeds = {0, 1};
  ps.ids = {"a", "b"};
  ps.predictions.push_back(row_matrix({{1.0}, {2.0}}));
  ps.predictions.push_back(row_matrix({{2.0}, {4.0}}));
  std::vector<double> targets{1.0, 2.0};
  RegressionChurn rc = regression_churn(ps, targets);
  CHECK(rc.churn == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(rc.id_mae == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(rc.ratio == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("top-k selections rank by positive probability with id tie-break") {
  Matrix pa = row_matrix(
      {{0.1, 0.9}, {0.2, 0.8}, {0.9, 0.1}, {0.8, 0.2}});
  Matrix pb = row_matrix(
      {{0.1, 0.9}, {0.9, 0.1}, {0.2, 0.8}, {0.8, 0.2}});
  std::vector<std::string> ids{"a", "b", "c", "d"};
  // Top-2: {a,b} vs {a,c} -> overlap 1, union 3.
  CHECK(topk_jaccard(pa, pb, 2, ids) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(topk_jaccard(pa, pa, 2, ids) == doctest::Approx(1.0));

  std::vector<double> labels{1.0, 0.0, 1.0, 0.0};
  CHECK(topk_hit_rate(pa, labels, 2, ids) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK_THROWS_AS(topk_jaccard(pa, pb, 0, ids), std::invalid_argument);
  CHECK_THROWS_AS(topk_jaccard(pa, pb, 5, ids), std::invalid_argument);
}

TEST_CASE("predictive entropy uses the probability floor") {
  std::vector<double> p{0.25, 0.75};
  CHECK(predictive_entropy(p) ==
        doctest::Approx(0.5623351446188083).epsilon(1e-12));
  std::vector<double> sure{0.0, 1.0};
  CHECK(predictive_entropy(sure) == doctest::Approx(0.0).epsilon(1e-9));
  std::vector<double> uniform{0.5, 0.5};
  CHECK(predictive_entropy(uniform) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("flip-recall curves are monotone and normalised") {
  SUBCASE("perfect ranking reaches full recall at the minimal prefix") {
    std::vector<double> mass{0.0, 2.0, 0.0, 1.0};
    FlipRecallCurve c = flip_recall_curve(mass, mass);
    REQUIRE(c.recall.size() == 5);
    CHECK(c.recall[0] == 0.0);
    CHECK(c.recall[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(c.recall[2] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(c.recall[4] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(c.aupc_norm == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("uniform mass gives the diagonal for any ranking") {
    std::vector<double> mass{1.0, 1.0, 1.0, 1.0};
    std::vector<double> scores{0.4, 0.1, 0.3, 0.2};
    FlipRecallCurve c = flip_recall_curve(scores, mass);
    for (std::size_t k = 0; k <= 4; ++k) {
      CHECK(c.recall[k] == doctest::Approx(k / 4.0).epsilon(1e-15));
    }
  }

  SUBCASE("random curves are nondecreasing from 0 to 1") {
    Rng rng = Rng::stream("test-curve", {0});
    std::vector<double> mass(37), scores(37);
    for (double& m : mass) m = rng.uniform01() < 0.3 ? rng.uniform01() : 0.0;
    mass[5] = 1.0;  // guarantee nonzero total
    for (double& s : scores) s = rng.uniform01();
    FlipRecallCurve c = flip_recall_curve(scores, mass);
    CHECK(c.recall.front() == 0.0);
    CHECK(c.recall.back() == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t k = 1; k < c.recall.size(); ++k) {
      CHECK(c.recall[k] >= c.recall[k - 1]);
    }
    CHECK(c.aupc_norm <= 1.0 + 1e-12);
    CHECK(c.aupc_raw > 0.0);
  }

  SUBCASE("an inverted ranking scores below the oracle") {
    std::vector<double> mass{3.0, 2.0, 1.0, 0.0};
    std::vector<double> inverted{0.0, 1.0, 2.0, 3.0};
    FlipRecallCurve worst = flip_recall_curve(inverted, mass);
    CHECK(worst.aupc_norm < 1.0);
  }

  SUBCASE("recall_at reviews ceil(q*n) rows") {
    std::vector<double> mass{0.0, 2.0, 0.0, 1.0};
    FlipRecallCurve c = flip_recall_curve(mass, mass);
    CHECK(recall_at(c, 0.25) == doctest::Approx(c.recall[1]));
    CHECK(recall_at(c, 0.3) == doctest::Approx(c.recall[2]));  // ceil(1.2) = 2
    CHECK(recall_at(c, 1.0) == doctest::Approx(1.0));
    CHECK_THROWS_AS(recall_at(c, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(recall_at(c, 1.5), std::invalid_argument);
  }

  std::vector<double> zero{0.0, 0.0};
  std::vector<double> s{1.0, 2.0};
  CHECK_THROWS_AS(flip_recall_curve(s, zero), std::invalid_argument);
}

TEST_CASE("prediction sets round-trip through CSV") {
  PredictionSet ps = random_classification_set(4, 9, 77);
  const std::string path = "/tmp/churnkit_metrics_ps.csv";
  save_prediction_set(ps, path);
  PredictionSet back = load_prediction_set(path, Task::binary_classification);
  CHECK(back.seeds == ps.seeds);
  CHECK(back.ids == ps.ids);
  REQUIRE(back.predictions.size() == ps.predictions.size());
  for (std::size_t s = 0; s < ps.predictions.size(); ++s) {
    CHECK(back.predictions[s] == ps.predictions[s]);
  }

  PredictionSet reg;
  reg.method = "reg";
  reg.task = Task::regression;
  reg.seeds = {3, 8};
  reg.ids = {"a", "b", "c"};
  reg.predictions.push_back(row_matrix({{0.25}, {-1.5}, {3.0}}));
  reg.predictions.push_back(row_matrix({{0.1}, {2.25}, {-0.75}}));
  save_prediction_set(reg, path);
  PredictionSet reg_back = load_prediction_set(path, Task::regression);
  CHECK(reg_back.seeds == reg.seeds);
  for (std::size_t s = 0; s < reg.predictions.size(); ++s) {
    CHECK(reg_back.predictions[s] == reg.predictions[s]);
  }

  CHECK_THROWS_AS(load_prediction_set(path, Task::binary_classification),
                  std::invalid_argument);
}
