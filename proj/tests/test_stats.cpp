#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "churnkit/rng.hpp"
#include "churnkit/stats.hpp"

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

}  // namespace

TEST_CASE("bootstrap CI is reproducible and centred on the sample mean") {
  std::vector<double> values{0.2, 0.4, 0.1, 0.9, 0.5, 0.3, 0.7, 0.6};
  CiReport a = paired_bootstrap_ci(values, 5000, 42);
  CiReport b = paired_bootstrap_ci(values, 5000, 42);
  CHECK(a.mean == b.mean);
  CHECK(a.lo == b.lo);
  CHECK(a.hi == b.hi);
  CHECK(a.resamples == 5000);
  CHECK(a.seed == 42);

  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  CHECK(a.mean == doctest::Approx(mean).epsilon(1e-15));
  CHECK(a.lo <= a.mean);
  CHECK(a.mean <= a.hi);

  CiReport c = paired_bootstrap_ci(values, 5000, 43);
  CHECK((c.lo != a.lo || c.hi != a.hi));

  // Degenerate vectors collapse the interval.
  std::vector<double> flat{0.25, 0.25, 0.25};
  CiReport f = paired_bootstrap_ci(flat, 200, 0);
  CHECK(f.lo == 0.25);
  CHECK(f.hi == 0.25);
  std::vector<double> one{1.5};
  CiReport o = paired_bootstrap_ci(one, 200, 0);
  CHECK(o.lo == 1.5);
  CHECK(o.hi == 1.5);

  CHECK_THROWS_AS(paired_bootstrap_ci(std::vector<double>{}, 10, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(paired_bootstrap_ci(values, 0, 0), std::invalid_argument);
}

TEST_CASE("bootstrap CI width tracks the analytic standard error") {
  Rng rng = Rng::stream("test-ci-width", {0});
  const std::size_t n = 400;
  std::vector<double> values(n);
  for (double& v : values) v = rng.normal();
  CiReport r = paired_bootstrap_ci(values, 4000, 7);
  const double se = 1.0 / std::sqrt(static_cast<double>(n));
  const double width = r.hi - r.lo;
  CHECK(width == doctest::Approx(2.0 * 1.96 * se).epsilon(0.15));
}

TEST_CASE("bootstrap CI covers the true mean about 95 percent of the time") {
  int covered = 0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    Rng rng = Rng::stream("test-ci-cover", {static_cast<std::uint64_t>(t)});
    std::vector<double> values(30);
    for (double& v : values) v = rng.normal();
    CiReport r =
        paired_bootstrap_ci(values, 2000, static_cast<std::uint64_t>(t));
    covered += (r.lo <= 0.0 && 0.0 <= r.hi);
  }
  // Percentile bootstrap at n=30 undercovers slightly; accept a wide band.
  CHECK(covered >= 170);
  CHECK(covered <= 199);
}

TEST_CASE("mean ranks average within-row ranks, lower scores ranking first") {
  Matrix m = row_matrix({{1.0, 2.0, 3.0}, {3.0, 2.0, 1.0}});
  std::vector<double> r = mean_ranks(m);
  REQUIRE(r.size() == 3);
  CHECK(r[0] == doctest::Approx(2.0));
  CHECK(r[1] == doctest::Approx(2.0));
  CHECK(r[2] == doctest::Approx(2.0));

  Matrix tied = row_matrix({{1.0, 1.0, 2.0}});
  std::vector<double> rt = mean_ranks(tied);
  CHECK(rt[0] == doctest::Approx(1.5));
  CHECK(rt[1] == doctest::Approx(1.5));
  CHECK(rt[2] == doctest::Approx(3.0));

  Matrix ordered = row_matrix({{0.1, 0.9}});
  std::vector<double> ro = mean_ranks(ordered);
  CHECK(ro[0] == doctest::Approx(1.0));
  CHECK(ro[1] == doctest::Approx(2.0));
}

TEST_CASE("friedman statistic matches hand-computed references") {
  // Two methods over nine datasets with a constant order.
  std::vector<double> two{1.0, 2.0};
  CHECK(friedman_chi2(two, 9) == doctest::Approx(9.0).epsilon(1e-14));

  // Seven-method rank profile over nine datasets.
  std::vector<double> ranks{5.78, 6.11, 4.94, 5.17, 2.89, 1.67, 1.44};
  CHECK(friedman_chi2(ranks, 9) ==
        doctest::Approx(44.52608571428572).epsilon(1e-12));

  CHECK_THROWS_AS(friedman_chi2(std::vector<double>{1.0}, 9),
                  std::invalid_argument);
  CHECK_THROWS_AS(friedman_chi2(two, 0), std::invalid_argument);
}

TEST_CASE("friedman test combines ranks, statistic, and tail probability") {
  // Column 0 always best, column 2 always worst -> ranks {1,2,3}, chi2 = 8.
  Matrix m = row_matrix({{0.1, 0.5, 0.9},
                         {0.2, 0.6, 0.8},
                         {0.0, 0.4, 0.7},
                         {0.3, 0.5, 0.9}});
  FriedmanResult res = friedman_test(m);
  CHECK(res.df == 2);
  CHECK(res.ranks[0] == doctest::Approx(1.0));
  CHECK(res.ranks[2] == doctest::Approx(3.0));
  CHECK(res.chi2 == doctest::Approx(8.0).epsilon(1e-12));
  CHECK(res.p_value ==
        doctest::Approx(chi2_upper_tail(8.0, 2)).epsilon(1e-14));

  // Frozen tail value for the seven-method profile above.
  CHECK(chi2_upper_tail(44.52608571428572, 6) ==
        doctest::Approx(5.812837116679552e-08).epsilon(1e-9));
}

TEST_CASE("regularised incomplete gamma matches frozen references") {
  struct Case {
    double a, x, q;
  };
  const Case cases[] = {
      {0.5, 0.5, 0.31731050786291115},  {1.0, 2.0, 0.1353352832366127},
      {2.5, 3.0, 0.30621891841327875},  {3.0, 22.263, 5.813064864416802e-08},
      {5.0, 1.0, 0.9963401531726563},   {10.0, 10.0, 0.4579297144718523},
  };
  for (const Case& c : cases) {
    CHECK(gamma_q(c.a, c.x) == doctest::Approx(c.q).epsilon(1e-12));
  }
  CHECK(gamma_q(3.0, 0.0) == 1.0);
  CHECK_THROWS_AS(gamma_q(0.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(gamma_q(1.0, -1.0), std::invalid_argument);
}

TEST_CASE("chi-square upper tail matches frozen references") {
  CHECK(chi2_upper_tail(9.0, 1) ==
        doctest::Approx(0.0026997960632601883).epsilon(1e-12));
  CHECK(chi2_upper_tail(3.84, 1) ==
        doctest::Approx(0.05004352124870519).epsilon(1e-12));
  CHECK(chi2_upper_tail(5.99, 2) ==
        doctest::Approx(0.05003662708658629).epsilon(1e-12));
  CHECK(chi2_upper_tail(9.49, 4) ==
        doctest::Approx(0.049953131223294894).epsilon(1e-12));
  CHECK(chi2_upper_tail(0.0, 3) == 1.0);
}

TEST_CASE("nemenyi critical difference uses the alpha=0.05 table") {
  CHECK(nemenyi_cd(2, 9) == doctest::Approx(0.6533333333333333).epsilon(1e-12));
  CHECK(nemenyi_cd(7, 9) == doctest::Approx(3.003114605427727).epsilon(1e-12));
  // More datasets shrink the difference.
  CHECK(nemenyi_cd(7, 36) == doctest::Approx(0.5 * nemenyi_cd(7, 9)).epsilon(1e-12));

  CHECK_THROWS_AS(nemenyi_cd(1, 9), std::invalid_argument);
  CHECK_THROWS_AS(nemenyi_cd(11, 9), std::invalid_argument);
  CHECK_THROWS_AS(nemenyi_cd(7, 0), std::invalid_argument);
  CHECK_THROWS_AS(nemenyi_cd(7, 9, 0.01), std::invalid_argument);
}
