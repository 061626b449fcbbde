#include "churnkit/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "churnkit/rng.hpp"

namespace churnkit {

namespace {

double interpolated_quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

// Lower regularised incomplete gamma by series expansion (x < a + 1).
double gamma_p_series(double a, double x) {
  double term = 1.0 / a;
  double sum = term;
  double ap = a;
  for (int i = 0; i < 1000; ++i) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (std::abs(term) < std::abs(sum) * 1e-15) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Upper regularised incomplete gamma by Lentz continued fraction (x >= a + 1).
double gamma_q_cf(double a, double x) {
  constexpr double kTiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / kTiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 1000; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < kTiny) d = kTiny;
    c = b + an / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-15) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

CiReport paired_bootstrap_ci(std::span<const double> values,
                             std::size_t resamples, std::uint64_t seed) {
  if (values.empty()) {
    throw std::invalid_argument("paired_bootstrap_ci: empty value vector");
  }
  if (resamples == 0) {
    throw std::invalid_argument("paired_bootstrap_ci: resamples must be >= 1");
  }
  const std::size_t n = values.size();
  CiReport report;
  report.resamples = resamples;
  report.seed = seed;
  report.mean = std::accumulate(values.begin(), values.end(), 0.0) /
                static_cast<double>(n);

  Rng rng = Rng::stream("ci", {seed});
  std::vector<double> means(resamples);
  for (std::size_t r = 0; r < resamples; ++r) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += values[rng.below(n)];
    means[r] = sum / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  report.lo = interpolated_quantile(means, 0.025);
  report.hi = interpolated_quantile(means, 0.975);
  return report;
}

std::vector<double> mean_ranks(const Matrix& values) {
  const std::size_t n = values.rows(), k = values.cols();
  if (n == 0 || k < 2) {
    throw std::invalid_argument("mean_ranks: need >= 1 row and >= 2 columns");
  }
  for (double v : values.data()) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument("mean_ranks: non-finite score");
    }
  }
  std::vector<double> sums(k, 0.0);
  std::vector<std::size_t> order(k);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = values.row(r);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return row[a] < row[b]; });
    std::size_t i = 0;
    while (i < k) {
      std::size_t j = i;
      while (j + 1 < k && row[order[j + 1]] == row[order[i]]) ++j;
      // Positions i..j (0-based) share the average of ranks i+1..j+1.
      const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
      for (std::size_t t = i; t <= j; ++t) sums[order[t]] += avg;
      i = j + 1;
    }
  }
  for (double& s : sums) s /= static_cast<double>(n);
  return sums;
}

double friedman_chi2(std::span<const double> mean_ranks_,
                     std::size_t n_datasets) {
  const std::size_t k = mean_ranks_.size();
  if (k < 2 || n_datasets == 0) {
    throw std::invalid_argument("friedman_chi2: need k >= 2 and N >= 1");
  }
  const double kd = static_cast<double>(k);
  const double center = (kd + 1.0) / 2.0;
  double dev2 = 0.0;
  for (double r : mean_ranks_) {
    dev2 += (r - center) * (r - center);
  }
  return 12.0 * static_cast<double>(n_datasets) / (kd * (kd + 1.0)) * dev2;
}

FriedmanResult friedman_test(const Matrix& values) {
  FriedmanResult res;
  res.ranks = mean_ranks(values);
  res.chi2 = friedman_chi2(res.ranks, values.rows());
  res.df = values.cols() - 1;
  res.p_value = chi2_upper_tail(res.chi2, res.df);
  return res;
}

double nemenyi_cd(std::size_t k, std::size_t n, double alpha) {
  if (alpha != 0.05) {
    throw std::invalid_argument(
        "nemenyi_cd: only the alpha=0.05 critical table is embedded");
  }
  if (k < 2 || k > 10) {
    throw std::invalid_argument("nemenyi_cd: k must be in [2, 10]");
  }
  if (n == 0) throw std::invalid_argument("nemenyi_cd: n must be >= 1");
  static constexpr double kQ05[] = {1.960, 2.343, 2.569, 2.728, 2.850,
                                    2.949, 3.031, 3.102, 3.164};
  const double q = kQ05[k - 2];
  const double kd = static_cast<double>(k);
  return q * std::sqrt(kd * (kd + 1.0) / (6.0 * static_cast<double>(n)));
}

double gamma_q(double a, double x) {
  if (a <= 0.0 || x < 0.0) {
    throw std::invalid_argument("gamma_q: need a > 0 and x >= 0");
  }
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
  return gamma_q_cf(a, x);
}

double chi2_upper_tail(double x, std::size_t df) {
  if (df == 0) throw std::invalid_argument("chi2_upper_tail: df must be >= 1");
  if (x < 0.0) throw std::invalid_argument("chi2_upper_tail: x must be >= 0");
  return gamma_q(static_cast<double>(df) / 2.0, x / 2.0);
}

}  // namespace churnkit
