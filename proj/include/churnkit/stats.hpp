#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "churnkit/matrix.hpp"

namespace churnkit {

struct CiReport {
  double mean = 0.0;  // sample mean of the input values
  double lo = 0.0;    // 2.5th percentile of resampled means
  double hi = 0.0;    // 97.5th percentile of resampled means
  std::size_t resamples = 0;
  std::uint64_t seed = 0;
};

// Percentile bootstrap for the mean: resample the value vector with
// replacement (pair level), take each resample's mean, report the 2.5/97.5
// percentiles (linear interpolation between order statistics). Stream
// ("ci", seed), so reports are reproducible.
CiReport paired_bootstrap_ci(std::span<const double> values,
                             std::size_t resamples = 10000,
                             std::uint64_t seed = 0);

// Within-row ranks of a (datasets x methods) score matrix where LOWER values
// rank better (rank 1); ties share the average rank. Returns column means.
std::vector<double> mean_ranks(const Matrix& values);

// Friedman statistic from mean ranks over n_datasets blocks:
// chi2 = 12*N/(k*(k+1)) * sum_j (Rbar_j - (k+1)/2)^2.
double friedman_chi2(std::span<const double> mean_ranks_, std::size_t n_datasets);

struct FriedmanResult {
  double chi2 = 0.0;
  std::size_t df = 0;
  double p_value = 1.0;
  std::vector<double> ranks;
};

FriedmanResult friedman_test(const Matrix& values);

// Critical difference for pairwise rank comparisons at alpha = 0.05:
// CD = q_alpha(k) * sqrt(k*(k+1)/(6*N)), with the alpha=0.05 studentised
// range constants embedded for k = 2..10.
double nemenyi_cd(std::size_t k, std::size_t n, double alpha = 0.05);

// Upper tail of the chi-square distribution via the regularised incomplete
// gamma function (series + continued fraction; no external stats library).
double chi2_upper_tail(double x, std::size_t df);

// Regularised upper incomplete gamma Q(a, x), relative accuracy ~1e-14.
double gamma_q(double a, double x);

}  // namespace churnkit
