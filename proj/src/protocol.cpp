#include "churnkit/protocol.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>

#include "churnkit/rng.hpp"

namespace churnkit {

void parallel_for(std::size_t n, std::size_t jobs,
                  const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  if (jobs <= 1 || n == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min(jobs, n);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mu;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= n || failed.load(std::memory_order_relaxed)) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
        failed.store(true, std::memory_order_relaxed);
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

namespace {

constexpr std::uint64_t kMeanReplicateTag = 0xFFFFFFFFull;

double mean_of(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("mean of an empty vector");
  return std::accumulate(v.begin(), v.end(), 0.0) /
         static_cast<double>(v.size());
}

Matrix gather_features(const Dataset& ds, const IndexList& rows) {
  Matrix x(rows.size(), ds.dim());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto src = ds.features.row(rows[r]);
    std::copy(src.begin(), src.end(), x.row(r).begin());
  }
  return x;
}

std::vector<double> gather_targets(const Dataset& ds, const IndexList& rows) {
  std::vector<double> y(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) y[r] = ds.targets[rows[r]];
  return y;
}

std::vector<std::string> gather_ids(const Dataset& ds, const IndexList& rows) {
  std::vector<std::string> ids(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) ids[r] = ds.ids[rows[r]];
  return ids;
}

double accuracy_of(const Matrix& pred, std::span<const double> labels) {
  std::size_t correct = 0;
  for (std::size_t r = 0; r < pred.rows(); ++r) {
    correct += (argmax_row(pred.row(r)) == 1) == (labels[r] > 0.5);
  }
  return static_cast<double>(correct) / static_cast<double>(pred.rows());
}

double mae_of(const Matrix& pred, std::span<const double> targets) {
  double sum = 0.0;
  for (std::size_t r = 0; r < pred.rows(); ++r) {
    sum += std::abs(pred(r, 0) - targets[r]);
  }
  return sum / static_cast<double>(pred.rows());
}

std::vector<double> paired_diff(std::span<const double> a,
                                std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("paired difference: length mismatch");
  }
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return d;
}

// |metric(s) - metric(s')| in percentage points per seed pair.
std::vector<double> pair_abs_drift_pp(
    std::span<const double> seed_values,
    const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  std::vector<double> out;
  out.reserve(pairs.size());
  for (auto [i, j] : pairs) {
    out.push_back(100.0 * std::abs(seed_values[i] - seed_values[j]));
  }
  return out;
}

// Everything one replicate's studies share: the split, the materialised test
// block, and the per-slot train seeds.
struct StudyContext {
  Split split;
  Matrix x_test;
  std::vector<double> y_test;
  std::vector<std::string> test_ids;
  std::vector<std::uint64_t> train_seeds;
};

StudyContext make_context(const Dataset& ds, std::uint64_t canonical_seed,
                          const ComparisonOptions& opts) {
  if (opts.n_seeds < 2) {
    throw std::invalid_argument("at least two train seeds are required");
  }
  StudyContext c;
  c.split = make_canonical_split(ds, canonical_seed, opts.test_frac);
  c.x_test = gather_features(ds, c.split.id_test);
  c.y_test = gather_targets(ds, c.split.id_test);
  c.test_ids = gather_ids(ds, c.split.id_test);
  c.train_seeds.reserve(opts.n_seeds);
  for (std::size_t s = 0; s < opts.n_seeds; ++s) {
    c.train_seeds.push_back(seed_combine(canonical_seed, s));
  }
  return c;
}

PredictionSet make_prediction_set(std::string label, Task task,
                                  const StudyContext& ctx,
                                  std::vector<Matrix> preds) {
  PredictionSet ps;
  ps.method = std::move(label);
  ps.task = task;
  ps.seeds = ctx.train_seeds;
  ps.ids = ctx.test_ids;
  ps.predictions = std::move(preds);
  return ps;
}

std::string method_display_label(const MethodSpec& spec) {
  char buf[64];
  switch (spec.kind) {
    case MethodKind::erm:
      return "ERM";
    case MethodKind::swa:
      return "SWA";
    case MethodKind::mc_dropout:
      std::snprintf(buf, sizeof(buf), "MC dropout (T=%zu)", spec.mc_passes);
      return buf;
    case MethodKind::deep_ensemble:
      std::snprintf(buf, sizeof(buf), "Deep ensemble (K=%zu)",
                    spec.ensemble_size);
      return buf;
    case MethodKind::bagging:
      std::snprintf(buf, sizeof(buf), "Bagging (K=%zu)", spec.ensemble_size);
      return buf;
    case MethodKind::twin:
      return "Twin-bootstrap (K=2, joint)";
  }
  return "unknown";
}

}  // namespace

PredictionSet predict_method_on_split(const Dataset& ds, const MethodSpec& spec,
                                      const ComparisonOptions& opts) {
  if (opts.canonical_seeds.empty()) {
    throw std::invalid_argument("predict_method_on_split: no canonical seeds");
  }
  const StudyContext c = make_context(ds, opts.canonical_seeds.front(), opts);
  std::vector<Matrix> slots(opts.n_seeds);
  parallel_for(slots.size(), opts.jobs, [&](std::size_t s) {
    Predictor model =
        train_method(ds, c.split.train_pool, spec, c.train_seeds[s]);
    slots[s] = predict(model, c.x_test);
  });
  return make_prediction_set(method_label(spec), ds.task, c, std::move(slots));
}

ComparisonResult run_comparison(const Dataset& ds,
                                const std::vector<MethodSpec>& methods_in,
                                const ComparisonOptions& opts) {
  if (methods_in.empty()) {
    throw std::invalid_argument("run_comparison: no methods given");
  }
  if (opts.canonical_seeds.empty()) {
    throw std::invalid_argument("run_comparison: no canonical seeds given");
  }
  const bool classification = ds.task == Task::binary_classification;

  // Every comparison is anchored on an ERM baseline.
  std::vector<MethodSpec> methods = methods_in;
  std::size_t erm_idx = methods.size();
  for (std::size_t m = 0; m < methods.size(); ++m) {
    if (methods[m].kind == MethodKind::erm) {
      erm_idx = m;
      break;
    }
  }
  if (erm_idx == methods.size()) {
    MethodSpec erm;
    erm.kind = MethodKind::erm;
    erm.train = methods_in.front().train;
    methods.insert(methods.begin(), erm);
    erm_idx = 0;
  }

  const std::size_t n_reps = opts.canonical_seeds.size();
  const std::size_t n_methods = methods.size();
  const std::size_t n_seeds = opts.n_seeds;

  std::vector<StudyContext> ctx;
  ctx.reserve(n_reps);
  for (std::uint64_t cs : opts.canonical_seeds) {
    ctx.push_back(make_context(ds, cs, opts));
  }

  ComparisonResult result;
  result.dataset = ds.name;
  result.test_n = ctx.front().split.id_test.size();

  // Train every (replicate, method, seed) cell member into its own slot;
  // scheduling order cannot matter.
  std::vector<Matrix> slots(n_reps * n_methods * n_seeds);
  parallel_for(slots.size(), opts.jobs, [&](std::size_t job) {
    const std::size_t rep = job / (n_methods * n_seeds);
    const std::size_t m = (job / n_seeds) % n_methods;
    const std::size_t s = job % n_seeds;
    try {
      Predictor model = train_method(ds, ctx[rep].split.train_pool, methods[m],
                                     ctx[rep].train_seeds[s]);
      slots[job] = predict(model, ctx[rep].x_test);
    } catch (const std::exception& e) {
      throw std::runtime_error(
          "cell (dataset=" + ds.name + ", method=" + method_label(methods[m]) +
          ", replicate=" + std::to_string(opts.canonical_seeds[rep]) +
          ", seed=" + std::to_string(s) + ") failed: " + e.what());
    }
  });

  // Pooled per-metric value vectors for the across-replicate aggregate rows.
  struct PooledMetric {
    std::string name;
    std::vector<double> values;
    bool point = false;
  };
  std::vector<std::vector<PooledMetric>> pooled(n_methods);

  auto pool_values = [&](std::size_t m, const std::string& name,
                         std::span<const double> values, bool point) {
    for (PooledMetric& p : pooled[m]) {
      if (p.name == name) {
        p.values.insert(p.values.end(), values.begin(), values.end());
        return;
      }
    }
    pooled[m].push_back(
        {name, std::vector<double>(values.begin(), values.end()), point});
  };

  auto metric_index = [&](std::size_t m, const std::string& name) {
    for (std::size_t i = 0; i < pooled[m].size(); ++i) {
      if (pooled[m][i].name == name) return i;
    }
    return pooled[m].size();
  };

  auto push_row = [&](const std::string& method, const std::string& replicate,
                      const std::string& metric, double mean, double lo,
                      double hi) {
    result.rows.push_back({result.dataset, ds.n(), method, replicate, metric,
                           mean, lo, hi});
  };

  auto emit_ci = [&](std::size_t rep, std::size_t m, const std::string& name,
                     std::span<const double> values) {
    const std::uint64_t seed = Rng::key_for(
        "ci-row", {opts.ci_seed, static_cast<std::uint64_t>(rep),
                   static_cast<std::uint64_t>(m),
                   static_cast<std::uint64_t>(metric_index(m, name))});
    const CiReport ci = paired_bootstrap_ci(values, opts.ci_resamples, seed);
    push_row(method_label(methods[m]),
             std::to_string(opts.canonical_seeds[rep]), name, ci.mean, ci.lo,
             ci.hi);
    pool_values(m, name, values, /*point=*/false);
  };

  auto emit_point = [&](std::size_t rep, std::size_t m, const std::string& name,
                        double value) {
    push_row(method_label(methods[m]),
             std::to_string(opts.canonical_seeds[rep]), name, value, value,
             value);
    pool_values(m, name, std::span<const double>(&value, 1), /*point=*/true);
  };

  for (std::size_t rep = 0; rep < n_reps; ++rep) {
    const StudyContext& c = ctx[rep];
    std::vector<ComparisonCell> cells(n_methods);
    // Per-method per-seed aggregate metric values (classification drift).
    std::vector<std::vector<std::vector<double>>> seed_metric_values(n_methods);

    std::size_t positives = 0;
    for (double y : c.y_test) positives += y > 0.5;
    const bool both_classes =
        positives > 0 && positives < c.y_test.size();

    for (std::size_t m = 0; m < n_methods; ++m) {
      std::vector<Matrix> preds(n_seeds);
      for (std::size_t s = 0; s < n_seeds; ++s) {
        preds[s] = std::move(slots[(rep * n_methods + m) * n_seeds + s]);
      }
      ComparisonCell& cell = cells[m];
      cell.method = method_label(methods[m]);
      cell.canonical_seed = opts.canonical_seeds[rep];
      cell.predictions = make_prediction_set(cell.method, ds.task, c,
                                             std::move(preds));
      cell.churn = pairwise_churn(cell.predictions);
      if (classification) {
        seed_metric_values[m].resize(5);
        for (const Matrix& p : cell.predictions.predictions) {
          cell.seed_accuracy.push_back(accuracy_of(p, c.y_test));
          for (AggMetric metric :
               {AggMetric::precision, AggMetric::recall, AggMetric::f1}) {
            seed_metric_values[m][static_cast<std::size_t>(metric)].push_back(
                aggregate_metric_value(p, c.y_test, c.test_ids, metric));
          }
          if (positives > 0) {
            seed_metric_values[m][static_cast<std::size_t>(
                                      AggMetric::average_precision)]
                .push_back(aggregate_metric_value(
                    p, c.y_test, c.test_ids, AggMetric::average_precision));
          }
        }
        seed_metric_values[m][static_cast<std::size_t>(AggMetric::accuracy)] =
            cell.seed_accuracy;
      } else {
        for (const Matrix& p : cell.predictions.predictions) {
          cell.seed_mae.push_back(mae_of(p, c.y_test));
        }
      }
    }

    // Majority-class filter, anchored on the ERM cell.
    if (classification) {
      const double majority =
          static_cast<double>(std::max(positives, c.y_test.size() - positives)) /
          static_cast<double>(c.y_test.size());
      FilterOutcome filter = majority_filter(
          mean_of(cells[erm_idx].seed_accuracy), majority, c.y_test.size());
      result.filters.push_back(filter);
      if (opts.enforce_filter && filter.verdict == FilterVerdict::fail) {
        char buf[160];
        std::snprintf(buf, sizeof(buf),
                      "dataset '%s' fails the majority-class filter "
                      "(gap %.2f pp, test n %zu); set filter.enforce=false "
                      "to run it anyway",
                      ds.name.c_str(), filter.gap_pp, c.y_test.size());
        throw std::runtime_error(buf);
      }
    }

    for (std::size_t m = 0; m < n_methods; ++m) {
      const ComparisonCell& cell = cells[m];
      const ComparisonCell& erm = cells[erm_idx];
      if (classification) {
        emit_ci(rep, m, "accuracy", cell.seed_accuracy);
        emit_ci(rep, m, "churn", cell.churn.pair_argmax_churn);
        emit_ci(rep, m, "symkl", cell.churn.pair_symkl);
        if (both_classes) {
          const PerClassChurn pc = per_class_churn(cell.predictions, c.y_test);
          emit_point(rep, m, "class0_churn", pc.class0);
          emit_point(rep, m, "class1_churn", pc.class1);
        }
        for (AggMetric metric :
             {AggMetric::accuracy, AggMetric::precision, AggMetric::recall,
              AggMetric::f1, AggMetric::average_precision}) {
          const auto& values =
              seed_metric_values[m][static_cast<std::size_t>(metric)];
          if (values.empty()) continue;  // AP without positives
          emit_ci(rep, m,
                  std::string(agg_metric_name(metric)) + "_drift_pp",
                  pair_abs_drift_pp(values, cell.churn.pairs));
        }
        emit_ci(rep, m, "delta_churn_vs_erm",
                paired_diff(cell.churn.pair_argmax_churn,
                            erm.churn.pair_argmax_churn));
        emit_ci(rep, m, "delta_symkl_vs_erm",
                paired_diff(cell.churn.pair_symkl, erm.churn.pair_symkl));
        emit_ci(rep, m, "delta_accuracy_vs_erm",
                paired_diff(cell.seed_accuracy, erm.seed_accuracy));
      } else {
        const RegressionChurn rc =
            regression_churn(cell.predictions, c.y_test);
        emit_ci(rep, m, "mae", cell.seed_mae);
        emit_ci(rep, m, "reg_churn", cell.churn.pair_argmax_churn);
        emit_point(rep, m, "churn_mae_ratio", rc.ratio);
        emit_ci(rep, m, "delta_mae_vs_erm",
                paired_diff(cell.seed_mae, erm.seed_mae));
        emit_ci(rep, m, "delta_reg_churn_vs_erm",
                paired_diff(cell.churn.pair_argmax_churn,
                            erm.churn.pair_argmax_churn));
      }
    }

    for (ComparisonCell& cell : cells) {
      if (!opts.keep_predictions) {
        cell.predictions.predictions.clear();
        cell.predictions.predictions.shrink_to_fit();
      }
      result.cells.push_back(std::move(cell));
    }
  }

  if (n_reps > 1) {
    for (std::size_t m = 0; m < n_methods; ++m) {
      for (std::size_t i = 0; i < pooled[m].size(); ++i) {
        const PooledMetric& p = pooled[m][i];
        if (p.point) {
          const double v = mean_of(p.values);
          push_row(method_label(methods[m]), "mean", p.name, v, v, v);
        } else {
          const std::uint64_t seed = Rng::key_for(
              "ci-row", {opts.ci_seed, kMeanReplicateTag,
                         static_cast<std::uint64_t>(m),
                         static_cast<std::uint64_t>(i)});
          const CiReport ci =
              paired_bootstrap_ci(p.values, opts.ci_resamples, seed);
          push_row(method_label(methods[m]), "mean", p.name, ci.mean, ci.lo,
                   ci.hi);
        }
      }
    }
  }
  return result;
}

LambdaSweepResult sweep_lambda(const Dataset& ds,
                               const std::vector<double>& lambda_grid,
                               const TrainConfig& cfg,
                               const ComparisonOptions& opts) {
  if (ds.task != Task::binary_classification) {
    throw std::invalid_argument("sweep_lambda requires classification");
  }
  if (lambda_grid.empty()) {
    throw std::invalid_argument("sweep_lambda: empty lambda grid");
  }
  for (double l : lambda_grid) {
    if (l < 0.0 || !std::isfinite(l)) {
      throw std::invalid_argument("sweep_lambda: lambda must be finite and >= 0");
    }
  }
  if (opts.canonical_seeds.empty()) {
    throw std::invalid_argument("sweep_lambda: no canonical seeds given");
  }
  const StudyContext c = make_context(ds, opts.canonical_seeds.front(), opts);
  const std::size_t n_seeds = opts.n_seeds;
  const std::size_t n_lambdas = lambda_grid.size();

  struct JobOut {
    Matrix pred;
    double head_symkl = 0.0;
  };
  // Slot 0..n_seeds-1: ERM; then lambda-major twin slots.
  std::vector<JobOut> slots((1 + n_lambdas) * n_seeds);
  parallel_for(slots.size(), opts.jobs, [&](std::size_t job) {
    const std::size_t s = job % n_seeds;
    if (job < n_seeds) {
      Predictor erm = train_erm(ds, c.split.train_pool, cfg, c.train_seeds[s]);
      slots[job].pred = predict(erm, c.x_test);
      return;
    }
    const std::size_t li = job / n_seeds - 1;
    Predictor twin = train_twin(ds, c.split.train_pool, cfg, c.train_seeds[s],
                                lambda_grid[li], OverlapMode::bootstrap);
    JobOut& out = slots[job];
    out.pred = predict(twin, c.x_test);
    const Matrix h0 = predict_single(twin.members[0], ds.task, c.x_test);
    const Matrix h1 = predict_single(twin.members[1], ds.task, c.x_test);
    out.head_symkl = symkl_disagreement(h0, h1);
  });

  LambdaSweepResult result;
  {
    std::vector<double> acc(n_seeds);
    for (std::size_t s = 0; s < n_seeds; ++s) {
      acc[s] = accuracy_of(slots[s].pred, c.y_test);
    }
    result.erm_accuracy = paired_bootstrap_ci(
        acc, opts.ci_resamples, Rng::key_for("ci-sweep", {opts.ci_seed, 0, 0}));
  }

  for (std::size_t li = 0; li < n_lambdas; ++li) {
    std::vector<Matrix> preds(n_seeds);
    std::vector<double> acc(n_seeds), head(n_seeds);
    for (std::size_t s = 0; s < n_seeds; ++s) {
      JobOut& out = slots[(1 + li) * n_seeds + s];
      acc[s] = accuracy_of(out.pred, c.y_test);
      head[s] = out.head_symkl;
      preds[s] = std::move(out.pred);
    }
    PredictionSet ps = make_prediction_set("twin", ds.task, c, std::move(preds));
    const PairwiseChurn churn = pairwise_churn(ps);
    SweepPoint point;
    point.lambda = lambda_grid[li];
    point.accuracy = paired_bootstrap_ci(
        acc, opts.ci_resamples,
        Rng::key_for("ci-sweep", {opts.ci_seed, li + 1, 1}));
    point.churn = paired_bootstrap_ci(
        churn.pair_argmax_churn, opts.ci_resamples,
        Rng::key_for("ci-sweep", {opts.ci_seed, li + 1, 2}));
    point.symkl = paired_bootstrap_ci(
        churn.pair_symkl, opts.ci_resamples,
        Rng::key_for("ci-sweep", {opts.ci_seed, li + 1, 3}));
    point.inter_head_symkl = mean_of(head);
    result.points.push_back(point);
  }

  result.selected =
      select_lambda(result.points, result.erm_accuracy.mean, 0.02);
  return result;
}

std::optional<double> select_lambda(const std::vector<SweepPoint>& sweep,
                                    double erm_acc, double tolerance) {
  if (sweep.empty()) {
    throw std::invalid_argument("select_lambda: empty sweep");
  }
  std::optional<double> best;
  for (const SweepPoint& p : sweep) {
    if (p.accuracy.mean >= erm_acc - tolerance) {
      if (!best || p.lambda > *best) best = p.lambda;
    }
  }
  return best;
}

std::optional<double> select_lambda_regression(
    std::span<const std::pair<double, double>> lambda_mae, double erm_mae,
    double tolerance) {
  if (lambda_mae.empty()) {
    throw std::invalid_argument("select_lambda_regression: empty sweep");
  }
  std::optional<double> best;
  for (const auto& [lambda, mae] : lambda_mae) {
    if (mae <= erm_mae + tolerance) {
      if (!best || lambda > *best) best = lambda;
    }
  }
  return best;
}

double loglog_slope(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size() || xs.size() < 2) {
    throw std::invalid_argument("loglog_slope needs >= 2 matched points");
  }
  std::vector<double> lx(xs.size()), ly(ys.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i] <= 0.0 || ys[i] <= 0.0) {
      throw std::invalid_argument("loglog_slope requires positive values");
    }
    lx[i] = std::log(xs[i]);
    ly[i] = std::log(ys[i]);
  }
  const double mx = mean_of(lx), my = mean_of(ly);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  if (sxx == 0.0) {
    throw std::invalid_argument("loglog_slope: all x values identical");
  }
  return sxy / sxx;
}

ScalingResult n_scaling(const Dataset& ds, const std::vector<std::size_t>& m_grid,
                        const TrainConfig& cfg, const ComparisonOptions& opts) {
  if (m_grid.empty()) throw std::invalid_argument("n_scaling: empty size grid");
  if (opts.canonical_seeds.empty()) {
    throw std::invalid_argument("n_scaling: no canonical seeds given");
  }
  const StudyContext c = make_context(ds, opts.canonical_seeds.front(), opts);
  for (std::size_t m : m_grid) {
    if (m < 2 || m > c.split.train_pool.size()) {
      throw std::invalid_argument(
          "n_scaling: prefix size must be in [2, pool size]");
    }
  }
  const std::size_t n_seeds = opts.n_seeds;
  std::vector<Matrix> slots(m_grid.size() * n_seeds);
  parallel_for(slots.size(), opts.jobs, [&](std::size_t job) {
    const std::size_t mi = job / n_seeds;
    const std::size_t s = job % n_seeds;
    const IndexList pool(c.split.train_pool.begin(),
                         c.split.train_pool.begin() +
                             static_cast<std::ptrdiff_t>(m_grid[mi]));
    Predictor erm = train_erm(ds, pool, cfg, c.train_seeds[s]);
    slots[job] = predict(erm, c.x_test);
  });

  ScalingResult result;
  std::vector<double> sizes, churn_means, symkl_means;
  for (std::size_t mi = 0; mi < m_grid.size(); ++mi) {
    std::vector<Matrix> preds(n_seeds);
    for (std::size_t s = 0; s < n_seeds; ++s) {
      preds[s] = std::move(slots[mi * n_seeds + s]);
    }
    PredictionSet ps = make_prediction_set("erm", ds.task, c, std::move(preds));
    const PairwiseChurn churn = pairwise_churn(ps);
    ScalingPoint point;
    point.m = m_grid[mi];
    point.churn = paired_bootstrap_ci(
        churn.pair_argmax_churn, opts.ci_resamples,
        Rng::key_for("ci-scale", {opts.ci_seed, mi, 0}));
    if (!churn.pair_symkl.empty()) {
      point.symkl = paired_bootstrap_ci(
          churn.pair_symkl, opts.ci_resamples,
          Rng::key_for("ci-scale", {opts.ci_seed, mi, 1}));
    }
    sizes.push_back(static_cast<double>(m_grid[mi]));
    churn_means.push_back(point.churn.mean);
    symkl_means.push_back(point.symkl.mean);
    result.points.push_back(point);
  }

  constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
  try {
    result.slope_churn = loglog_slope(sizes, churn_means);
  } catch (const std::invalid_argument&) {
    result.slope_churn = kNan;
  }
  try {
    result.slope_symkl = loglog_slope(sizes, symkl_means);
  } catch (const std::invalid_argument&) {
    result.slope_symkl = kNan;
  }
  return result;
}

TriageResult triage_convergence(const PredictionSet& ps,
                                const std::vector<std::size_t>& subset_sizes,
                                std::size_t n_subsets, double review_frac,
                                std::uint64_t subset_seed) {
  validate_prediction_set(ps);
  if (ps.task != Task::binary_classification) {
    throw std::invalid_argument("triage_convergence requires classification");
  }
  const std::size_t n_total_seeds = ps.seeds.size();
  if (n_total_seeds < 2) {
    throw std::invalid_argument("triage_convergence needs >= 2 seeds");
  }
  if (subset_sizes.empty() || n_subsets == 0) {
    throw std::invalid_argument("triage_convergence: empty study plan");
  }
  for (std::size_t k : subset_sizes) {
    if (k < 2 || k > n_total_seeds) {
      throw std::invalid_argument(
          "triage_convergence: subset sizes must be in [2, seed count]");
    }
  }
  if (!(review_frac > 0.0) || review_frac > 1.0) {
    throw std::invalid_argument("triage_convergence: review_frac in (0, 1]");
  }

  const PairwiseChurn gold = pairwise_churn(ps);
  const std::vector<double>& gold_mass = gold.per_example_flip_count;
  if (std::accumulate(gold_mass.begin(), gold_mass.end(), 0.0) <= 0.0) {
    throw std::invalid_argument(
        "triage_convergence: no prediction flips across seeds, ranking "
        "is undefined");
  }

  const std::size_t n = ps.ids.size();
  std::vector<std::vector<std::size_t>> cls(n_total_seeds,
                                            std::vector<std::size_t>(n));
  for (std::size_t s = 0; s < n_total_seeds; ++s) {
    for (std::size_t r = 0; r < n; ++r) {
      cls[s][r] = argmax_row(ps.predictions[s].row(r));
    }
  }

  TriageResult result;
  result.review_frac = review_frac;
  result.gold_recall =
      recall_at(flip_recall_curve(gold_mass, gold_mass), review_frac);

  std::vector<double> score(n);
  for (std::size_t k : subset_sizes) {
    TriageRow row;
    row.subset_size = k;
    if (k == n_total_seeds) {
      row.n_subsets = 1;
      row.mean_recall = result.gold_recall;
      result.rows.push_back(row);
      continue;
    }
    row.n_subsets = n_subsets;
    double total = 0.0;
    for (std::size_t j = 0; j < n_subsets; ++j) {
      Rng rng = Rng::stream("triage", {subset_seed, k, j});
      std::vector<std::size_t> order(n_total_seeds);
      std::iota(order.begin(), order.end(), std::size_t{0});
      for (std::size_t i = 0; i < k; ++i) {
        const std::size_t pick =
            i + static_cast<std::size_t>(rng.below(n_total_seeds - i));
        std::swap(order[i], order[pick]);
      }
      std::fill(score.begin(), score.end(), 0.0);
      for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = a + 1; b < k; ++b) {
          const auto& ca = cls[order[a]];
          const auto& cb = cls[order[b]];
          for (std::size_t r = 0; r < n; ++r) score[r] += ca[r] != cb[r];
        }
      }
      total += recall_at(flip_recall_curve(score, gold_mass), review_frac);
    }
    row.mean_recall = total / static_cast<double>(n_subsets);
    result.rows.push_back(row);
  }
  return result;
}

EntropyChurnResult entropy_vs_churn(const PredictionSet& ps,
                                    std::size_t entropy_seed_index,
                                    double review_frac) {
  validate_prediction_set(ps);
  if (ps.task != Task::binary_classification) {
    throw std::invalid_argument("entropy_vs_churn requires classification");
  }
  if (ps.seeds.size() < 2) {
    throw std::invalid_argument("entropy_vs_churn needs >= 2 seeds");
  }
  if (entropy_seed_index >= ps.seeds.size()) {
    throw std::invalid_argument("entropy_vs_churn: seed index out of range");
  }
  if (!(review_frac > 0.0) || review_frac > 1.0) {
    throw std::invalid_argument("entropy_vs_churn: review_frac in (0, 1]");
  }

  const PairwiseChurn gold = pairwise_churn(ps);
  const std::vector<double>& gold_mass = gold.per_example_flip_count;
  if (std::accumulate(gold_mass.begin(), gold_mass.end(), 0.0) <= 0.0) {
    throw std::invalid_argument(
        "entropy_vs_churn: no prediction flips across seeds");
  }

  const std::size_t n = ps.ids.size();
  std::vector<double> churn_score(n), entropy_score(n);
  for (std::size_t r = 0; r < n; ++r) {
    churn_score[r] = argmax_row(ps.predictions[0].row(r)) !=
                             argmax_row(ps.predictions[1].row(r))
                         ? 1.0
                         : 0.0;
    entropy_score[r] =
        predictive_entropy(ps.predictions[entropy_seed_index].row(r));
  }

  EntropyChurnResult result;
  result.review_frac = review_frac;
  const std::pair<const char*, const std::vector<double>*> scored[] = {
      {"churn_k2", &churn_score}, {"entropy", &entropy_score}};
  for (const auto& [name, score] : scored) {
    const FlipRecallCurve curve = flip_recall_curve(*score, gold_mass);
    result.rows.push_back({name, recall_at(curve, review_frac), curve.aupc_raw,
                           curve.aupc_norm});
  }
  return result;
}

std::vector<OverlapRow> overlap_spectrum(const Dataset& ds, double lambda,
                                         const TrainConfig& cfg,
                                         const ComparisonOptions& opts,
                                         const std::vector<OverlapMode>& modes) {
  if (ds.task != Task::binary_classification) {
    throw std::invalid_argument("overlap_spectrum requires classification");
  }
  if (modes.empty()) {
    throw std::invalid_argument("overlap_spectrum: no modes given");
  }
  if (opts.canonical_seeds.empty()) {
    throw std::invalid_argument("overlap_spectrum: no canonical seeds given");
  }
  const StudyContext c = make_context(ds, opts.canonical_seeds.front(), opts);
  const std::size_t n_seeds = opts.n_seeds;

  // Slot layout: ERM first, then mode-major twin slots.
  std::vector<Matrix> slots((1 + modes.size()) * n_seeds);
  parallel_for(slots.size(), opts.jobs, [&](std::size_t job) {
    const std::size_t s = job % n_seeds;
    if (job < n_seeds) {
      Predictor erm = train_erm(ds, c.split.train_pool, cfg, c.train_seeds[s]);
      slots[job] = predict(erm, c.x_test);
      return;
    }
    const std::size_t mi = job / n_seeds - 1;
    Predictor twin = train_twin(ds, c.split.train_pool, cfg, c.train_seeds[s],
                                lambda, modes[mi]);
    slots[job] = predict(twin, c.x_test);
  });

  std::vector<double> erm_acc(n_seeds);
  std::vector<Matrix> erm_preds(n_seeds);
  for (std::size_t s = 0; s < n_seeds; ++s) {
    erm_acc[s] = accuracy_of(slots[s], c.y_test);
    erm_preds[s] = std::move(slots[s]);
  }
  PredictionSet erm_ps =
      make_prediction_set("erm", ds.task, c, std::move(erm_preds));
  const PairwiseChurn erm_churn = pairwise_churn(erm_ps);
  const double erm_mean_acc = mean_of(erm_acc);

  std::vector<OverlapRow> rows;
  for (std::size_t mi = 0; mi < modes.size(); ++mi) {
    std::vector<double> twin_acc(n_seeds);
    std::vector<Matrix> twin_preds(n_seeds);
    double overlap_total = 0.0;
    for (std::size_t s = 0; s < n_seeds; ++s) {
      Matrix& pred = slots[(1 + mi) * n_seeds + s];
      twin_acc[s] = accuracy_of(pred, c.y_test);
      twin_preds[s] = std::move(pred);
      overlap_total += twin_loader_overlap(c.split.train_pool,
                                           c.train_seeds[s], modes[mi],
                                           cfg.epochs);
    }
    PredictionSet twin_ps =
        make_prediction_set("twin", ds.task, c, std::move(twin_preds));
    const PairwiseChurn twin_churn = pairwise_churn(twin_ps);

    OverlapRow row;
    row.mode = modes[mi];
    row.measured_overlap = overlap_total / static_cast<double>(n_seeds);
    row.erm_accuracy = erm_mean_acc;
    row.twin_accuracy = mean_of(twin_acc);
    row.delta_churn = paired_bootstrap_ci(
        paired_diff(twin_churn.pair_argmax_churn, erm_churn.pair_argmax_churn),
        opts.ci_resamples, Rng::key_for("ci-overlap", {opts.ci_seed, mi, 0}));
    row.delta_accuracy = paired_bootstrap_ci(
        paired_diff(twin_acc, erm_acc), opts.ci_resamples,
        Rng::key_for("ci-overlap", {opts.ci_seed, mi, 1}));
    row.collapse = (erm_mean_acc - row.twin_accuracy) > 0.05;
    rows.push_back(std::move(row));
  }
  return rows;
}

FootprintRow compute_footprint(const MethodSpec& spec) {
  FootprintRow row;
  row.method = method_display_label(spec);
  switch (spec.kind) {
    case MethodKind::erm:
    case MethodKind::swa:
    case MethodKind::mc_dropout:
      row.train_forwards_per_step = 1;
      row.train_backwards_per_step = 1;
      row.test_models = 1;
      row.wallclock = "1x";
      break;
    case MethodKind::deep_ensemble:
    case MethodKind::bagging: {
      const std::size_t k = spec.ensemble_size;
      row.train_forwards_per_step = k;
      row.train_backwards_per_step = k;
      row.test_models = k;
      if (k == 1) {
        row.wallclock = "1x";
      } else {
        row.wallclock = std::to_string(k) + "x (sequential)";
      }
      break;
    }
    case MethodKind::twin:
      row.train_forwards_per_step = 4;
      row.train_backwards_per_step = 1;
      row.joint_backward = true;
      row.test_models = 2;
      row.wallclock = "~2x";
      break;
  }
  return row;
}

std::vector<FootprintRow> footprint_table() {
  std::vector<FootprintRow> rows;
  MethodSpec spec;
  spec.kind = MethodKind::erm;
  rows.push_back(compute_footprint(spec));
  spec.kind = MethodKind::deep_ensemble;
  spec.ensemble_size = 5;
  rows.push_back(compute_footprint(spec));
  spec.kind = MethodKind::bagging;
  spec.ensemble_size = 2;
  rows.push_back(compute_footprint(spec));
  spec.ensemble_size = 5;
  rows.push_back(compute_footprint(spec));
  spec.kind = MethodKind::twin;
  rows.push_back(compute_footprint(spec));
  return rows;
}

}  // namespace churnkit
