#include "churnkit/bo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include "churnkit/metrics.hpp"
#include "churnkit/rng.hpp"

namespace churnkit {

namespace {

struct Standardizer {
  double mean = 0.0, sd = 1.0;
  static Standardizer from(std::span<const double> v) {
    Standardizer s;
    if (v.empty()) return s;
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) /
             static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - s.mean) * (x - s.mean);
    var /= static_cast<double>(v.size());
    s.sd = var > 0.0 ? std::sqrt(var) : 1.0;
    return s;
  }
  double fwd(double x) const { return (x - mean) / sd; }
};

// In-place lower Cholesky of a row-major n x n matrix; false on failure.
bool cholesky(std::vector<double>& a, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double sum = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) sum -= a[i * n + k] * a[j * n + k];
      if (i == j) {
        if (sum <= 0.0) return false;
        a[i * n + i] = std::sqrt(sum);
      } else {
        a[i * n + j] = sum / a[j * n + j];
      }
    }
    for (std::size_t j = i + 1; j < n; ++j) a[i * n + j] = 0.0;
  }
  return true;
}

void solve_lower(const std::vector<double>& l, std::size_t n,
                 std::vector<double>& x) {
  for (std::size_t i = 0; i < n; ++i) {
    double sum = x[i];
    for (std::size_t k = 0; k < i; ++k) sum -= l[i * n + k] * x[k];
    x[i] = sum / l[i * n + i];
  }
}

void solve_upper_from_lower(const std::vector<double>& l, std::size_t n,
                            std::vector<double>& x) {
  for (std::size_t i = n; i-- > 0;) {
    double sum = x[i];
    for (std::size_t k = i + 1; k < n; ++k) sum -= l[k * n + i] * x[k];
    x[i] = sum / l[i * n + i];
  }
}

double accuracy_against(const Matrix& probs, std::span<const double> labels) {
  std::size_t correct = 0;
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    correct += (argmax_row(probs.row(r)) == 1) == (labels[r] > 0.5);
  }
  return static_cast<double>(correct) / static_cast<double>(probs.rows());
}

}  // namespace

double matern52(double x1, double x2, double ell, double sigma2) {
  if (ell <= 0.0 || sigma2 <= 0.0) {
    throw std::invalid_argument("matern52: ell and sigma2 must be positive");
  }
  const double r = std::abs(x1 - x2);
  const double s = std::sqrt(5.0) * r / ell;
  return sigma2 * (1.0 + s + s * s / 3.0) * std::exp(-s);
}

GpModel GpModel::fit(std::span<const double> xs, std::span<const double> ys,
                     double ell, double sigma2, double noise) {
  if (xs.size() != ys.size()) {
    throw std::invalid_argument("GpModel::fit: xs/ys size mismatch");
  }
  GpModel m;
  m.ell_ = ell;
  m.sigma2_ = sigma2;
  m.n_ = xs.size();
  if (m.n_ == 0) return m;

  Standardizer sx = Standardizer::from(xs);
  Standardizer sy = Standardizer::from(ys);
  m.x_mean_ = sx.mean;
  m.x_sd_ = sx.sd;
  m.y_mean_ = sy.mean;
  m.y_sd_ = sy.sd;
  m.xs_std_.resize(m.n_);
  std::vector<double> y_std(m.n_);
  for (std::size_t i = 0; i < m.n_; ++i) {
    m.xs_std_[i] = sx.fwd(xs[i]);
    y_std[i] = sy.fwd(ys[i]);
  }

  const std::size_t n = m.n_;
  std::vector<double> base(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      base[i * n + j] = matern52(m.xs_std_[i], m.xs_std_[j], ell, sigma2);
    }
  }
  double jitter = 0.0;
  for (;;) {
    m.chol_ = base;
    for (std::size_t i = 0; i < n; ++i) m.chol_[i * n + i] += noise + jitter;
    if (cholesky(m.chol_, n)) break;
    jitter = jitter == 0.0 ? 1e-8 : jitter * 10.0;
    if (jitter > 1e-2) {
      throw std::runtime_error(
          "GP covariance is not positive definite even at maximum jitter");
    }
  }
  m.jitter_ = jitter;
  m.alpha_ = y_std;
  solve_lower(m.chol_, n, m.alpha_);
  solve_upper_from_lower(m.chol_, n, m.alpha_);
  return m;
}

GpModel::Posterior GpModel::posterior(double xstar) const {
  if (n_ == 0) return {0.0, sigma2_};
  const double xs = (xstar - x_mean_) / x_sd_;
  std::vector<double> k(n_);
  for (std::size_t i = 0; i < n_; ++i) {
    k[i] = matern52(xs, xs_std_[i], ell_, sigma2_);
  }
  double mu = 0.0;
  for (std::size_t i = 0; i < n_; ++i) mu += k[i] * alpha_[i];
  std::vector<double> v = k;
  solve_lower(chol_, n_, v);
  double quad = 0.0;
  for (double x : v) quad += x * x;
  const double var_std = std::max(sigma2_ - quad, 0.0);
  return {y_mean_ + y_sd_ * mu, var_std * y_sd_ * y_sd_};
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

double expected_improvement(double mu, double sigma, double best) {
  if (sigma < 0.0) throw std::invalid_argument("EI: sigma must be >= 0");
  const double gain = mu - best;
  if (sigma == 0.0) return std::max(gain, 0.0);
  const double z = gain / sigma;
  return gain * normal_cdf(z) + sigma * normal_pdf(z);
}

BoLambdaResult bo_lambda_search(const Dataset& ds, const IndexList& pool,
                                const TrainConfig& cfg, std::uint64_t train_seed,
                                const BoLambdaOptions& opts) {
  if (ds.task != Task::binary_classification) {
    throw std::invalid_argument("bo_lambda_search requires classification");
  }
  if (opts.trials == 0) throw std::invalid_argument("trials must be >= 1");
  if (opts.folds < 2) throw std::invalid_argument("folds must be >= 2");
  if (pool.size() < opts.folds * 2) {
    throw std::invalid_argument("pool too small to carve the requested folds");
  }
  if (!(opts.lambda_lo > 0.0) || opts.lambda_hi <= opts.lambda_lo) {
    throw std::invalid_argument("lambda bounds must satisfy 0 < lo < hi");
  }

  // Deterministic fold carve: shuffle the pool, deal round-robin.
  IndexList order = pool;
  {
    Rng rng = Rng::stream("bo-folds", {opts.fold_seed});
    for (std::size_t i = order.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(rng.below(i));
      std::swap(order[i - 1], order[j]);
    }
  }
  std::vector<IndexList> fold_val(opts.folds), fold_train(opts.folds);
  for (std::size_t i = 0; i < order.size(); ++i) {
    fold_val[i % opts.folds].push_back(order[i]);
  }
  for (std::size_t f = 0; f < opts.folds; ++f) {
    for (std::size_t g = 0; g < opts.folds; ++g) {
      if (g == f) continue;
      fold_train[f].insert(fold_train[f].end(), fold_val[g].begin(),
                           fold_val[g].end());
    }
  }

  const double log_lo = std::log10(opts.lambda_lo);
  const double log_hi = std::log10(opts.lambda_hi);

  auto run_trial = [&](std::size_t t, double lambda) {
    BoTrial trial;
    trial.trial = t;
    trial.lambda = lambda;
    trial.baseline = t == 1;
    for (std::size_t f = 0; f < opts.folds; ++f) {
      Matrix x_val;
      std::vector<double> y_val;
      x_val = Matrix(fold_val[f].size(), ds.dim());
      y_val.resize(fold_val[f].size());
      for (std::size_t r = 0; r < fold_val[f].size(); ++r) {
        auto src = ds.features.row(fold_val[f][r]);
        std::copy(src.begin(), src.end(), x_val.row(r).begin());
        y_val[r] = ds.targets[fold_val[f][r]];
      }
      Matrix arm_pred[2];
      for (std::size_t arm = 0; arm < 2; ++arm) {
        const std::uint64_t arm_seed =
            Rng::key_for("bo-arm", {train_seed, t, f, arm});
        Predictor twin = train_twin(ds, fold_train[f], cfg, arm_seed, lambda,
                                    OverlapMode::bootstrap);
        arm_pred[arm] = predict(twin, x_val);
      }
      trial.fold_acc.push_back(accuracy_against(arm_pred[0], y_val));
      trial.fold_churn.push_back(argmax_churn(arm_pred[0], arm_pred[1]));
    }
    const double inv_k = 1.0 / static_cast<double>(opts.folds);
    trial.mean_acc =
        std::accumulate(trial.fold_acc.begin(), trial.fold_acc.end(), 0.0) *
        inv_k;
    trial.mean_churn =
        std::accumulate(trial.fold_churn.begin(), trial.fold_churn.end(), 0.0) *
        inv_k;
    return trial;
  };

  BoLambdaResult result;
  double a0 = 0.0;
  double next_lambda = 0.0;  // trial 1 is always the lambda = 0 baseline
  for (std::size_t t = 1; t <= opts.trials; ++t) {
    BoTrial trial = run_trial(t, next_lambda);
    if (t == 1) a0 = trial.mean_acc;
    trial.score = -trial.mean_churn -
                  opts.penalty * std::max(0.0, a0 - opts.delta - trial.mean_acc);
    result.trials.push_back(trial);
    if (t == opts.trials) break;

    if (t <= opts.warmup) {
      Rng rng = Rng::stream("bo-lambda", {train_seed, t});
      next_lambda = std::pow(10.0, log_lo + rng.uniform01() * (log_hi - log_lo));
    } else {
      std::vector<double> xs, ys;
      for (const BoTrial& tr : result.trials) {
        if (tr.baseline) continue;  // lambda = 0 has no log-space image
        xs.push_back(std::log10(tr.lambda));
        ys.push_back(tr.score);
      }
      GpModel gp = GpModel::fit(xs, ys, opts.gp_ell, opts.gp_sigma2,
                                opts.gp_noise);
      const double best = ys.empty() ? 0.0 : *std::max_element(ys.begin(), ys.end());
      double best_ei = -1.0;
      double best_x = log_lo;
      for (std::size_t g = 0; g < opts.grid_points; ++g) {
        const double frac =
            opts.grid_points == 1
                ? 0.0
                : static_cast<double>(g) / static_cast<double>(opts.grid_points - 1);
        const double lx = log_lo + frac * (log_hi - log_lo);
        GpModel::Posterior post = gp.posterior(lx);
        const double ei =
            expected_improvement(post.mu, std::sqrt(post.var), best);
        if (ei > best_ei) {
          best_ei = ei;
          best_x = lx;
        }
      }
      next_lambda = std::pow(10.0, best_x);
    }
  }

  std::size_t best_t = 0;
  for (std::size_t i = 1; i < result.trials.size(); ++i) {
    if (result.trials[i].score > result.trials[best_t].score) best_t = i;
  }
  result.lambda_star = result.trials[best_t].lambda;
  return result;
}

double median_lambda(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of empty vector");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

Trajectory bo_trajectory(const Dataset& ds, const MethodSpec& spec,
                         std::size_t k, std::size_t budget,
                         std::size_t init_size, std::uint64_t init_seed) {
  if (ds.task != Task::regression) {
    throw std::invalid_argument("bo_trajectory requires a regression dataset");
  }
  if (budget == 0 || init_size == 0) {
    throw std::invalid_argument("budget and init_size must be >= 1");
  }
  if (ds.n() < init_size + budget) {
    throw std::invalid_argument("dataset too small for init_size + budget");
  }

  // Shared initial labelled set: keyed by init_seed only.
  IndexList order(ds.n());
  std::iota(order.begin(), order.end(), std::size_t{0});
  {
    Rng rng = Rng::stream("bo-init", {init_seed});
    for (std::size_t i = order.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(rng.below(i));
      std::swap(order[i - 1], order[j]);
    }
  }
  IndexList labelled(order.begin(), order.begin() + init_size);
  IndexList remaining(order.begin() + init_size, order.end());
  std::sort(remaining.begin(), remaining.end());

  Trajectory traj;
  traj.index = k;
  for (std::size_t t = 1; t <= budget; ++t) {
    const std::uint64_t seed = k * 1000000ull + t;
    Predictor model = train_method(ds, labelled, spec, seed);
    Matrix x_rem(remaining.size(), ds.dim());
    for (std::size_t r = 0; r < remaining.size(); ++r) {
      auto src = ds.features.row(remaining[r]);
      std::copy(src.begin(), src.end(), x_rem.row(r).begin());
    }
    Matrix yhat = predict(model, x_rem);
    std::size_t pick = 0;
    for (std::size_t r = 1; r < remaining.size(); ++r) {
      const double a = yhat(r, 0), b = yhat(pick, 0);
      if (a > b || (a == b && ds.ids[remaining[r]] < ds.ids[remaining[pick]])) {
        pick = r;
      }
    }
    const std::size_t row = remaining[pick];
    traj.acquired.push_back(row);
    traj.acquired_y.push_back(ds.targets[row]);
    labelled.push_back(row);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  traj.final_best =
      *std::max_element(traj.acquired_y.begin(), traj.acquired_y.end());
  return traj;
}

TrajectoryReport trajectory_report(const std::vector<Trajectory>& trajectories,
                                   double y_range, std::size_t ci_resamples,
                                   std::uint64_t ci_seed) {
  if (trajectories.size() < 2) {
    throw std::invalid_argument("trajectory_report needs >= 2 trajectories");
  }
  if (y_range <= 0.0) {
    throw std::invalid_argument("trajectory_report: y_range must be positive");
  }
  const std::size_t n = trajectories.size();
  std::vector<double> finals(n);
  for (std::size_t i = 0; i < n; ++i) finals[i] = trajectories[i].final_best;

  TrajectoryReport rep;
  rep.final_best_mean =
      std::accumulate(finals.begin(), finals.end(), 0.0) /
      static_cast<double>(n);
  double ss = 0.0;
  for (double v : finals) {
    ss += (v - rep.final_best_mean) * (v - rep.final_best_mean);
  }
  rep.final_best_std = std::sqrt(ss / static_cast<double>(n - 1));
  rep.std_over_range_pct = 100.0 * rep.final_best_std / y_range;
  rep.mean_ci = paired_bootstrap_ci(finals, ci_resamples, ci_seed);

  // Bootstrap the sample std with the same resampling discipline.
  {
    Rng rng = Rng::stream("ci", {seed_combine(ci_seed, 1)});
    std::vector<double> stds(ci_resamples);
    std::vector<double> buf(n);
    for (std::size_t r = 0; r < ci_resamples; ++r) {
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        buf[i] = finals[rng.below(n)];
        mean += buf[i];
      }
      mean /= static_cast<double>(n);
      double s2 = 0.0;
      for (double v : buf) s2 += (v - mean) * (v - mean);
      stds[r] = std::sqrt(s2 / static_cast<double>(n - 1));
    }
    std::sort(stds.begin(), stds.end());
    rep.std_ci.resamples = ci_resamples;
    rep.std_ci.seed = ci_seed;
    rep.std_ci.mean = rep.final_best_std;
    const double pos_lo = 0.025 * static_cast<double>(ci_resamples - 1);
    const double pos_hi = 0.975 * static_cast<double>(ci_resamples - 1);
    auto interp = [&](double pos) {
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      if (lo + 1 >= stds.size()) return stds.back();
      return stds[lo] + (pos - std::floor(pos)) * (stds[lo + 1] - stds[lo]);
    };
    rep.std_ci.lo = interp(pos_lo);
    rep.std_ci.hi = interp(pos_hi);
  }

  double jaccard_sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::unordered_set<std::size_t> a(trajectories[i].acquired.begin(),
                                      trajectories[i].acquired.end());
    for (std::size_t j = i + 1; j < n; ++j) {
      std::size_t inter = 0;
      for (std::size_t v : trajectories[j].acquired) inter += a.count(v);
      const double uni = static_cast<double>(a.size() +
                                             trajectories[j].acquired.size()) -
                         static_cast<double>(inter);
      jaccard_sum += static_cast<double>(inter) / uni;
      ++pairs;
    }
  }
  rep.mean_jaccard = jaccard_sum / static_cast<double>(pairs);
  return rep;
}

}  // namespace churnkit
