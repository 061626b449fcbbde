#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "churnkit/dataio.hpp"
#include "churnkit/methods.hpp"
#include "churnkit/stats.hpp"

namespace churnkit {

// Matern-5/2 kernel: sigma2 * (1 + s + s^2/3) * exp(-s), s = sqrt(5)*r/ell.
double matern52(double x1, double x2, double ell, double sigma2);

// One-dimensional GP with fixed hyperparameters. Inputs and outputs are
// standardised internally; the covariance Cholesky escalates jitter x10 up to
// 1e-2 before giving up.
class GpModel {
 public:
  GpModel() = default;
  static GpModel fit(std::span<const double> xs, std::span<const double> ys,
                     double ell = 1.0, double sigma2 = 1.0,
                     double noise = 1e-4);

  struct Posterior {
    double mu = 0.0;
    double var = 0.0;
  };
  // Empty model -> prior (0, sigma2).
  Posterior posterior(double xstar) const;

  double jitter() const { return jitter_; }

 private:
  std::vector<double> xs_std_;
  std::vector<double> alpha_;  // K^{-1} y (standardised)
  std::vector<double> chol_;   // lower-triangular factor, row-major n x n
  double x_mean_ = 0.0, x_sd_ = 1.0;
  double y_mean_ = 0.0, y_sd_ = 1.0;
  double ell_ = 1.0, sigma2_ = 1.0;
  double jitter_ = 0.0;
  std::size_t n_ = 0;
};

// Maximisation EI: (mu - best)*Phi(z) + sigma*phi(z), z = (mu-best)/sigma;
// sigma = 0 degrades to max(mu - best, 0).
double expected_improvement(double mu, double sigma, double best);

double normal_cdf(double z);
double normal_pdf(double z);

// One trial of the consistency-weight search.
struct BoTrial {
  std::size_t trial = 0;   // 1-based
  double lambda = 0.0;
  bool baseline = false;   // trial 1 (lambda = 0); excluded from GP inputs
  std::vector<double> fold_acc;
  std::vector<double> fold_churn;
  double mean_acc = 0.0;   // a-bar
  double mean_churn = 0.0; // c-bar
  double score = 0.0;      // -c-bar - penalty * max(0, a0 - delta - a-bar)
};

struct BoLambdaOptions {
  std::size_t trials = 50;
  std::size_t warmup = 5;          // trials 2..warmup+1 are log-uniform
  std::size_t folds = 3;
  double delta = 0.02;             // tolerated accuracy drop vs trial 1
  double penalty = 100.0;
  double lambda_lo = 1e-3;
  double lambda_hi = 1e4;
  std::uint64_t fold_seed = 99;
  std::size_t grid_points = 512;   // EI candidates, log-spaced
  double gp_ell = 1.0;
  double gp_sigma2 = 1.0;
  double gp_noise = 1e-4;
};

struct BoLambdaResult {
  double lambda_star = 0.0;
  std::vector<BoTrial> trials;
};

// Cross-validated search for the consistency weight on one train seed:
// trial 1 is forced to lambda = 0 and anchors the accuracy floor; each trial
// trains two independent twin pairs per fold and scores the argmax
// disagreement between the two 2-head ensembles on the held-out fold.
BoLambdaResult bo_lambda_search(const Dataset& ds, const IndexList& pool,
                                const TrainConfig& cfg, std::uint64_t train_seed,
                                const BoLambdaOptions& opts = {});

// Median with the even-count mean-of-middles convention.
double median_lambda(std::vector<double> values);

// Greedy label-acquisition trajectory on a regression dataset: start from a
// shared init_size labelled set (keyed by init_seed only), then for each of
// budget steps retrain with seed k*1e6 + t, predict the unlabelled remainder,
// and acquire the argmax prediction (ties by ascending id).
struct Trajectory {
  std::size_t index = 0;       // k
  IndexList acquired;          // dataset rows in acquisition order
  std::vector<double> acquired_y;
  double final_best = 0.0;     // max acquired y
};

Trajectory bo_trajectory(const Dataset& ds, const MethodSpec& spec,
                         std::size_t k, std::size_t budget = 10,
                         std::size_t init_size = 50,
                         std::uint64_t init_seed = 0);

struct TrajectoryReport {
  double final_best_mean = 0.0;
  double final_best_std = 0.0;   // sample std (n-1)
  CiReport mean_ci;
  CiReport std_ci;
  double std_over_range_pct = 0.0;
  double mean_jaccard = 0.0;     // acquired-set overlap over trajectory pairs
};

TrajectoryReport trajectory_report(const std::vector<Trajectory>& trajectories,
                                   double y_range,
                                   std::size_t ci_resamples = 10000,
                                   std::uint64_t ci_seed = 0);

}  // namespace churnkit
