#include "churnkit/methods.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "churnkit/rng.hpp"

namespace churnkit {

namespace {

std::vector<std::size_t> net_dims(const Dataset& ds, const TrainConfig& cfg) {
  std::vector<std::size_t> dims;
  dims.push_back(ds.dim());
  for (std::size_t h : cfg.hidden_dims) dims.push_back(h);
  dims.push_back(ds.task == Task::binary_classification ? 2 : 1);
  return dims;
}

void gather_batch(const Dataset& ds, const IndexList& rows, Matrix& x,
                  std::vector<double>& y) {
  x = Matrix(rows.size(), ds.dim());
  y.resize(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto src = ds.features.row(rows[r]);
    auto dst = x.row(r);
    std::copy(src.begin(), src.end(), dst.begin());
    y[r] = ds.targets[rows[r]];
  }
}

// Epoch-e visit order over a sample of size n for (train_seed, member).
IndexList epoch_order(std::size_t n, std::uint64_t train_seed,
                      std::uint64_t member, std::uint64_t epoch) {
  IndexList order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng::stream("shuffle", {train_seed, member, epoch});
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

std::size_t batch_count(std::size_t n, std::size_t batch_size) {
  return (n + batch_size - 1) / batch_size;
}

// One member's full training run on a fixed sample of pool rows.
MlpParams train_single(const Dataset& ds, const IndexList& sample,
                       const TrainConfig& cfg, std::uint64_t train_seed,
                       std::uint64_t member, bool collect_swa,
                       SwaAccumulator* swa_out) {
  if (sample.empty()) throw std::invalid_argument("training sample is empty");
  if (cfg.batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (collect_swa && cfg.epochs < 2) {
    throw std::invalid_argument("weight averaging needs at least 2 epochs");
  }
  MlpParams params = init_mlp(net_dims(ds, cfg), seed_combine(train_seed, member));
  OptimizerState opt = make_optimizer_state(params);
  const std::size_t n = sample.size();
  const std::size_t first_swa_epoch = cfg.epochs - cfg.epochs / 2;

  Matrix x;
  std::vector<double> y;
  IndexList batch_rows;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    IndexList order = epoch_order(n, train_seed, member, epoch);
    const std::size_t n_batches = batch_count(n, cfg.batch_size);
    for (std::size_t b = 0; b < n_batches; ++b) {
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(n, lo + cfg.batch_size);
      batch_rows.clear();
      for (std::size_t i = lo; i < hi; ++i) batch_rows.push_back(sample[order[i]]);
      gather_batch(ds, batch_rows, x, y);
      std::optional<DropoutSpec> dropout;
      if (cfg.dropout_p > 0.0) {
        dropout = DropoutSpec{
            cfg.dropout_p,
            Rng::key_for("train-mask", {train_seed, member, epoch, b})};
      }
      LossGrads lg = ds.task == Task::binary_classification
                         ? backward_ce(params, x, y, dropout)
                         : backward_mse(params, x, y, dropout);
      clip_global_norm(lg.grads, cfg.clip_norm);
      optimizer_step(params, opt, lg.grads, cfg);
    }
    if (collect_swa && epoch >= first_swa_epoch) swa_update(*swa_out, params);
  }
  return params;
}

struct TwinSamples {
  IndexList a, b;
};

// Loader draw for one twin epoch. bootstrap/shared keys carry no epoch, so
// the multiset is the same every epoch and head h's stream matches bagging
// member h exactly; disjoint re-partitions the pool each epoch.
TwinSamples draw_twin_samples(const IndexList& pool, std::uint64_t train_seed,
                              OverlapMode mode, std::uint64_t epoch) {
  TwinSamples s;
  switch (mode) {
    case OverlapMode::bootstrap:
      s.a = draw_bootstrap(pool, seed_combine(train_seed, 0)).indices;
      s.b = draw_bootstrap(pool, seed_combine(train_seed, 1)).indices;
      break;
    case OverlapMode::shared:
      s.a = draw_bootstrap(pool, seed_combine(train_seed, 0)).indices;
      s.b = s.a;
      break;
    case OverlapMode::disjoint: {
      if (pool.size() < 2) {
        throw std::invalid_argument("disjoint mode needs a pool of >= 2 rows");
      }
      IndexList order = pool;
      Rng rng = Rng::stream("disjoint", {train_seed, epoch});
      for (std::size_t i = order.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(order[i - 1], order[j]);
      }
      const std::size_t half = order.size() / 2;
      s.a.assign(order.begin(), order.begin() + half);
      s.b.assign(order.begin() + half, order.begin() + 2 * half);
      break;
    }
  }
  return s;
}

double sample_overlap(const IndexList& a, const IndexList& b) {
  BootstrapSample sa{0, a}, sb{0, b};
  return overlap_stats(sa, sb).shared_unique_frac;
}

Matrix mean_member_outputs(const std::vector<Matrix>& outputs) {
  Matrix acc = outputs.front();
  for (std::size_t m = 1; m < outputs.size(); ++m) {
    for (std::size_t i = 0; i < acc.data().size(); ++i) {
      acc.data()[i] += outputs[m].data()[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(outputs.size());
  for (double& v : acc.data()) v *= inv;
  return acc;
}

}  // namespace

const char* method_kind_name(MethodKind kind) {
  switch (kind) {
    case MethodKind::erm: return "erm";
    case MethodKind::swa: return "swa";
    case MethodKind::mc_dropout: return "mc_dropout";
    case MethodKind::deep_ensemble: return "deep_ensemble";
    case MethodKind::bagging: return "bagging";
    case MethodKind::twin: return "twin";
  }
  return "erm";
}

const char* overlap_mode_name(OverlapMode mode) {
  switch (mode) {
    case OverlapMode::disjoint: return "disjoint";
    case OverlapMode::bootstrap: return "bootstrap";
    case OverlapMode::shared: return "shared";
  }
  return "bootstrap";
}

std::string method_label(const MethodSpec& spec) {
  switch (spec.kind) {
    case MethodKind::erm: return "erm";
    case MethodKind::swa: return "swa";
    case MethodKind::mc_dropout: return "mc_dropout";
    case MethodKind::deep_ensemble:
      return "deep_ensemble_k" + std::to_string(spec.ensemble_size);
    case MethodKind::bagging:
      return "bagging_k" + std::to_string(spec.ensemble_size);
    case MethodKind::twin: {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%g", spec.lambda);
      std::string label = std::string("twin_lam") + buf;
      if (spec.overlap != OverlapMode::bootstrap) {
        label += std::string("_") + overlap_mode_name(spec.overlap);
      }
      return label;
    }
  }
  return "erm";
}

Predictor train_erm(const Dataset& ds, const IndexList& pool,
                    const TrainConfig& cfg, std::uint64_t train_seed) {
  const IndexList sample = draw_bootstrap(pool, seed_combine(train_seed, 0)).indices;
  Predictor p;
  p.kind = MethodKind::erm;
  p.task = ds.task;
  p.members.push_back(train_single(ds, sample, cfg, train_seed, 0, false, nullptr));
  return p;
}

Predictor train_swa(const Dataset& ds, const IndexList& pool,
                    const TrainConfig& cfg, std::uint64_t train_seed) {
  const IndexList sample = draw_bootstrap(pool, seed_combine(train_seed, 0)).indices;
  SwaAccumulator acc;
  train_single(ds, sample, cfg, train_seed, 0, true, &acc);
  Predictor p;
  p.kind = MethodKind::swa;
  p.task = ds.task;
  p.members.push_back(std::move(acc.mean));
  return p;
}

Predictor train_mc_dropout(const Dataset& ds, const IndexList& pool,
                           const TrainConfig& cfg, std::uint64_t train_seed,
                           std::size_t mc_passes) {
  if (cfg.dropout_p <= 0.0) {
    throw std::invalid_argument("mc_dropout requires dropout_p > 0");
  }
  if (mc_passes == 0) {
    throw std::invalid_argument("mc_dropout requires at least one pass");
  }
  const IndexList sample = draw_bootstrap(pool, seed_combine(train_seed, 0)).indices;
  Predictor p;
  p.kind = MethodKind::mc_dropout;
  p.task = ds.task;
  p.members.push_back(train_single(ds, sample, cfg, train_seed, 0, false, nullptr));
  p.dropout_p = cfg.dropout_p;
  p.mc_passes = mc_passes;
  p.train_seed = train_seed;
  return p;
}

Predictor train_deep_ensemble(const Dataset& ds, const IndexList& pool,
                              const TrainConfig& cfg, std::uint64_t train_seed,
                              std::size_t k) {
  if (k == 0) throw std::invalid_argument("ensemble size must be >= 1");
  // One shared bootstrap (member-0 stream); members differ by init and order.
  const IndexList sample = draw_bootstrap(pool, seed_combine(train_seed, 0)).indices;
  Predictor p;
  p.kind = MethodKind::deep_ensemble;
  p.task = ds.task;
  for (std::size_t m = 0; m < k; ++m) {
    p.members.push_back(train_single(ds, sample, cfg, train_seed, m, false, nullptr));
  }
  return p;
}

Predictor train_bagging(const Dataset& ds, const IndexList& pool,
                        const TrainConfig& cfg, std::uint64_t train_seed,
                        std::size_t k) {
  if (k == 0) throw std::invalid_argument("ensemble size must be >= 1");
  Predictor p;
  p.kind = MethodKind::bagging;
  p.task = ds.task;
  for (std::size_t m = 0; m < k; ++m) {
    const IndexList sample =
        draw_bootstrap(pool, seed_combine(train_seed, m)).indices;
    p.members.push_back(train_single(ds, sample, cfg, train_seed, m, false, nullptr));
  }
  return p;
}

Predictor train_twin(const Dataset& ds, const IndexList& pool,
                     const TrainConfig& cfg, std::uint64_t train_seed,
                     double lambda, OverlapMode mode, TwinDiagnostics* diag) {
  if (lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");
  if (cfg.batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (cfg.dropout_p > 0.0) {
    throw std::invalid_argument("twin training does not support dropout");
  }
  MlpParams net_a = init_mlp(net_dims(ds, cfg), seed_combine(train_seed, 0));
  MlpParams net_b = init_mlp(net_dims(ds, cfg), seed_combine(train_seed, 1));
  OptimizerState opt_a = make_optimizer_state(net_a);
  OptimizerState opt_b = make_optimizer_state(net_b);

  double overlap_sum = 0.0;
  std::size_t zipped = 0;
  Matrix xa, xb;
  std::vector<double> ya, yb;
  IndexList rows_a, rows_b;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    TwinSamples samples = draw_twin_samples(pool, train_seed, mode, epoch);
    overlap_sum += sample_overlap(samples.a, samples.b);
    IndexList order_a = epoch_order(samples.a.size(), train_seed, 0, epoch);
    IndexList order_b = epoch_order(samples.b.size(), train_seed, 1, epoch);
    const std::size_t batches_a = batch_count(samples.a.size(), cfg.batch_size);
    const std::size_t batches_b = batch_count(samples.b.size(), cfg.batch_size);
    if (batches_a != batches_b) {
      throw std::runtime_error("twin loaders produced unequal batch counts");
    }
    zipped = batches_a;
    for (std::size_t b = 0; b < batches_a; ++b) {
      auto slice = [&](const IndexList& sample, const IndexList& order,
                       IndexList& rows) {
        rows.clear();
        const std::size_t lo = b * cfg.batch_size;
        const std::size_t hi = std::min(sample.size(), lo + cfg.batch_size);
        for (std::size_t i = lo; i < hi; ++i) rows.push_back(sample[order[i]]);
      };
      slice(samples.a, order_a, rows_a);
      slice(samples.b, order_b, rows_b);
      gather_batch(ds, rows_a, xa, ya);
      gather_batch(ds, rows_b, xb, yb);
      TwinGrads tg = backward_twin(net_a, net_b, xa, ya, xb, yb, lambda, ds.task);
      clip_global_norm(tg.grads_a, cfg.clip_norm);
      clip_global_norm(tg.grads_b, cfg.clip_norm);
      optimizer_step(net_a, opt_a, tg.grads_a, cfg);
      optimizer_step(net_b, opt_b, tg.grads_b, cfg);
    }
  }
  if (diag) {
    diag->mean_loader_overlap =
        cfg.epochs == 0 ? 0.0 : overlap_sum / static_cast<double>(cfg.epochs);
    diag->zipped_batches = zipped;
  }
  Predictor p;
  p.kind = MethodKind::twin;
  p.task = ds.task;
  p.members.push_back(std::move(net_a));
  p.members.push_back(std::move(net_b));
  return p;
}

Predictor train_method(const Dataset& ds, const IndexList& pool,
                       const MethodSpec& spec, std::uint64_t train_seed) {
  switch (spec.kind) {
    case MethodKind::erm:
      return train_erm(ds, pool, spec.train, train_seed);
    case MethodKind::swa:
      return train_swa(ds, pool, spec.train, train_seed);
    case MethodKind::mc_dropout:
      return train_mc_dropout(ds, pool, spec.train, train_seed, spec.mc_passes);
    case MethodKind::deep_ensemble:
      return train_deep_ensemble(ds, pool, spec.train, train_seed,
                                 spec.ensemble_size);
    case MethodKind::bagging:
      return train_bagging(ds, pool, spec.train, train_seed, spec.ensemble_size);
    case MethodKind::twin:
      return train_twin(ds, pool, spec.train, train_seed, spec.lambda,
                        spec.overlap);
  }
  throw std::invalid_argument("unknown method kind");
}

Matrix predict_single(const MlpParams& params, Task task, const Matrix& x) {
  Matrix out = forward(params, x);
  if (task == Task::binary_classification) softmax_rows_inplace(out);
  return out;
}

Matrix predict(const Predictor& p, const Matrix& x) {
  if (p.members.empty()) throw std::invalid_argument("untrained predictor");
  if (p.kind == MethodKind::mc_dropout) {
    std::vector<Matrix> passes;
    passes.reserve(p.mc_passes);
    for (std::size_t t = 0; t < p.mc_passes; ++t) {
      DropoutSpec spec{p.dropout_p, Rng::key_for("mc-mask", {p.train_seed, t})};
      Matrix out = forward(p.members.front(), x, spec);
      if (p.task == Task::binary_classification) softmax_rows_inplace(out);
      passes.push_back(std::move(out));
    }
    return mean_member_outputs(passes);
  }
  std::vector<Matrix> outputs;
  outputs.reserve(p.members.size());
  for (const MlpParams& m : p.members) {
    outputs.push_back(predict_single(m, p.task, x));
  }
  return mean_member_outputs(outputs);
}

double twin_loader_overlap(const IndexList& pool, std::uint64_t train_seed,
                           OverlapMode mode, std::size_t epochs) {
  if (epochs == 0) throw std::invalid_argument("epochs must be >= 1");
  double sum = 0.0;
  for (std::size_t e = 0; e < epochs; ++e) {
    TwinSamples s = draw_twin_samples(pool, train_seed, mode, e);
    sum += sample_overlap(s.a, s.b);
  }
  return sum / static_cast<double>(epochs);
}

}  // namespace churnkit
