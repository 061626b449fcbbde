#include "churnkit/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "churnkit/nn.hpp"

namespace churnkit {

namespace {

std::size_t expected_cols(Task task) {
  return task == Task::binary_classification ? 2 : 1;
}

// Ranking order shared by the top-K metrics: score descending, id ascending.
std::vector<std::size_t> rank_desc(std::span<const double> scores,
                                   std::span<const std::string> ids) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });
  return order;
}

double seed_metric(const Matrix& pred, std::span<const double> labels,
                   std::span<const std::string> ids, AggMetric metric,
                   bool& empty_denominator) {
  const std::size_t n = pred.rows();
  std::size_t tp = 0, fp = 0, fn = 0, correct = 0, positives = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool truth = labels[i] > 0.5;
    const bool predicted = argmax_row(pred.row(i)) == 1;
    positives += truth;
    correct += predicted == truth;
    tp += predicted && truth;
    fp += predicted && !truth;
    fn += !predicted && truth;
  }
  switch (metric) {
    case AggMetric::accuracy:
      return static_cast<double>(correct) / static_cast<double>(n);
    case AggMetric::precision:
      if (tp + fp == 0) {
        empty_denominator = true;
        return 0.0;
      }
      return static_cast<double>(tp) / static_cast<double>(tp + fp);
    case AggMetric::recall:
      if (tp + fn == 0) {
        empty_denominator = true;
        return 0.0;
      }
      return static_cast<double>(tp) / static_cast<double>(tp + fn);
    case AggMetric::f1: {
      bool empty = false;
      const double p = seed_metric(pred, labels, ids, AggMetric::precision, empty);
      const double r = seed_metric(pred, labels, ids, AggMetric::recall, empty);
      empty_denominator |= empty;
      if (p + r == 0.0) return 0.0;
      return 2.0 * p * r / (p + r);
    }
    case AggMetric::average_precision: {
      if (positives == 0) {
        throw std::invalid_argument(
            "average precision undefined: no positive examples in test set");
      }
      std::vector<double> scores(n);
      for (std::size_t i = 0; i < n; ++i) scores[i] = pred(i, 1);
      auto order = rank_desc(scores, ids);
      double ap = 0.0;
      std::size_t hits = 0;
      for (std::size_t k = 0; k < n; ++k) {
        if (labels[order[k]] > 0.5) {
          ++hits;
          ap += static_cast<double>(hits) / static_cast<double>(k + 1);
        }
      }
      return ap / static_cast<double>(positives);
    }
  }
  return 0.0;
}

std::string fmt_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

const char* agg_metric_name(AggMetric metric) {
  switch (metric) {
    case AggMetric::accuracy: return "accuracy";
    case AggMetric::precision: return "precision";
    case AggMetric::recall: return "recall";
    case AggMetric::f1: return "f1";
    case AggMetric::average_precision: return "ap";
  }
  return "unknown";
}

double aggregate_metric_value(const Matrix& pred, std::span<const double> labels,
                              std::span<const std::string> ids, AggMetric metric,
                              bool* empty_denominator) {
  if (pred.rows() != labels.size() || pred.rows() != ids.size()) {
    throw std::invalid_argument("aggregate_metric_value: shape mismatch");
  }
  bool empty = false;
  const double v = seed_metric(pred, labels, ids, metric, empty);
  if (empty_denominator) *empty_denominator = empty;
  return v;
}

void validate_prediction_set(const PredictionSet& ps) {
  if (ps.seeds.empty() || ps.predictions.size() != ps.seeds.size()) {
    throw std::invalid_argument("prediction set must hold one matrix per seed");
  }
  const std::size_t n = ps.ids.size();
  const std::size_t c = expected_cols(ps.task);
  for (const Matrix& m : ps.predictions) {
    if (m.rows() != n || m.cols() != c) {
      throw std::invalid_argument("prediction matrix shape mismatch");
    }
    for (double v : m.data()) {
      if (!std::isfinite(v)) {
        throw std::invalid_argument("non-finite prediction value");
      }
    }
    if (ps.task == Task::binary_classification) {
      for (std::size_t r = 0; r < n; ++r) {
        double sum = 0.0;
        for (double v : m.row(r)) {
          if (v < -1e-9) throw std::invalid_argument("negative probability");
          sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-6) {
          throw std::invalid_argument("prediction row is not on the simplex");
        }
      }
    }
  }
}

std::vector<std::pair<std::size_t, std::size_t>> seed_pairs(std::size_t n_seeds) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(n_seeds * (n_seeds - 1) / 2);
  for (std::size_t i = 0; i < n_seeds; ++i) {
    for (std::size_t j = i + 1; j < n_seeds; ++j) pairs.emplace_back(i, j);
  }
  return pairs;
}

std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < row.size(); ++k) {
    if (row[k] > row[best]) best = k;
  }
  return best;
}

double argmax_churn(const Matrix& pa, const Matrix& pb) {
  if (pa.rows() != pb.rows() || pa.cols() != pb.cols()) {
    throw std::invalid_argument("argmax_churn: shape mismatch");
  }
  if (pa.rows() == 0) throw std::invalid_argument("argmax_churn: empty input");
  std::size_t flips = 0;
  for (std::size_t r = 0; r < pa.rows(); ++r) {
    flips += argmax_row(pa.row(r)) != argmax_row(pb.row(r));
  }
  return static_cast<double>(flips) / static_cast<double>(pa.rows());
}

double symkl_disagreement(const Matrix& pa, const Matrix& pb) {
  return symkl_mean(pa, pb);
}

PairwiseChurn pairwise_churn(const PredictionSet& ps) {
  validate_prediction_set(ps);
  if (ps.seeds.size() < 2) {
    throw std::invalid_argument("pairwise churn needs at least two seeds");
  }
  const std::size_t s = ps.seeds.size();
  const std::size_t n = ps.ids.size();
  PairwiseChurn out;
  out.pairs = seed_pairs(s);
  out.per_example_flip_count.assign(n, 0.0);

  // Cache argmax classes once; regression compares scalar outputs directly.
  const bool classification = ps.task == Task::binary_classification;
  std::vector<std::vector<std::size_t>> cls;
  if (classification) {
    cls.resize(s, std::vector<std::size_t>(n));
    for (std::size_t i = 0; i < s; ++i) {
      for (std::size_t r = 0; r < n; ++r) {
        cls[i][r] = argmax_row(ps.predictions[i].row(r));
      }
    }
  }

  double churn_total = 0.0;
  for (auto [i, j] : out.pairs) {
    if (classification) {
      std::size_t flips = 0;
      for (std::size_t r = 0; r < n; ++r) {
        if (cls[i][r] != cls[j][r]) {
          ++flips;
          out.per_example_flip_count[r] += 1.0;
        }
      }
      out.pair_argmax_churn.push_back(static_cast<double>(flips) /
                                      static_cast<double>(n));
      out.pair_symkl.push_back(
          symkl_mean(ps.predictions[i], ps.predictions[j]));
    } else {
      double sum = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        const double diff =
            std::abs(ps.predictions[i](r, 0) - ps.predictions[j](r, 0));
        sum += diff;
        out.per_example_flip_count[r] += diff;
      }
      out.pair_argmax_churn.push_back(sum / static_cast<double>(n));
    }
    churn_total += out.pair_argmax_churn.back();
  }

  const double n_pairs = static_cast<double>(out.pairs.size());
  out.per_example_churn.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    out.per_example_churn[r] = out.per_example_flip_count[r] / n_pairs;
  }
  out.mean_churn = churn_total / n_pairs;
  if (classification) {
    out.mean_symkl =
        std::accumulate(out.pair_symkl.begin(), out.pair_symkl.end(), 0.0) /
        n_pairs;
  }
  return out;
}

PerClassChurn per_class_churn(const PredictionSet& ps,
                              std::span<const double> labels) {
  if (ps.task != Task::binary_classification) {
    throw std::invalid_argument("per-class churn requires classification");
  }
  if (labels.size() != ps.ids.size()) {
    throw std::invalid_argument("per_class_churn: label count mismatch");
  }
  PairwiseChurn pc = pairwise_churn(ps);
  double sum0 = 0.0, sum1 = 0.0;
  std::size_t n0 = 0, n1 = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] > 0.5) {
      sum1 += pc.per_example_churn[r];
      ++n1;
    } else {
      sum0 += pc.per_example_churn[r];
      ++n0;
    }
  }
  if (n0 == 0 || n1 == 0) {
    throw std::invalid_argument("per_class_churn: a class is absent from the test set");
  }
  return {sum0 / static_cast<double>(n0), sum1 / static_cast<double>(n1)};
}

DriftResult aggregate_drift(const PredictionSet& ps,
                            std::span<const double> labels, AggMetric metric) {
  validate_prediction_set(ps);
  if (ps.task != Task::binary_classification) {
    throw std::invalid_argument("aggregate drift requires classification");
  }
  if (labels.size() != ps.ids.size()) {
    throw std::invalid_argument("aggregate_drift: label count mismatch");
  }
  DriftResult out;
  std::vector<double> per_seed;
  per_seed.reserve(ps.seeds.size());
  for (const Matrix& pred : ps.predictions) {
    per_seed.push_back(
        seed_metric(pred, labels, ps.ids, metric, out.empty_denominator));
  }
  auto pairs = seed_pairs(ps.seeds.size());
  if (pairs.empty()) {
    throw std::invalid_argument("aggregate drift needs at least two seeds");
  }
  double total = 0.0;
  for (auto [i, j] : pairs) total += std::abs(per_seed[i] - per_seed[j]);
  out.mean_abs_pp = 100.0 * total / static_cast<double>(pairs.size());
  return out;
}

RegressionChurn regression_churn(const PredictionSet& ps,
                                 std::span<const double> targets) {
  if (ps.task != Task::regression) {
    throw std::invalid_argument("regression_churn requires a regression set");
  }
  if (targets.size() != ps.ids.size()) {
    throw std::invalid_argument("regression_churn: target count mismatch");
  }
  PairwiseChurn pc = pairwise_churn(ps);
  RegressionChurn out;
  out.churn = pc.mean_churn;
  double mae_total = 0.0;
  for (const Matrix& pred : ps.predictions) {
    double mae = 0.0;
    for (std::size_t r = 0; r < pred.rows(); ++r) {
      mae += std::abs(pred(r, 0) - targets[r]);
    }
    mae_total += mae / static_cast<double>(pred.rows());
  }
  out.id_mae = mae_total / static_cast<double>(ps.predictions.size());
  if (out.id_mae > 0.0) {
    out.ratio = out.churn / out.id_mae;
  } else {
    out.ratio = out.churn == 0.0 ? 0.0
                                 : std::numeric_limits<double>::infinity();
  }
  return out;
}

double topk_jaccard(const Matrix& pa, const Matrix& pb, std::size_t k,
                    std::span<const std::string> ids) {
  if (pa.rows() != pb.rows() || pa.rows() != ids.size()) {
    throw std::invalid_argument("topk_jaccard: shape mismatch");
  }
  if (k < 1 || k > pa.rows()) {
    throw std::invalid_argument("topk_jaccard: k out of range [1, n]");
  }
  auto top_of = [&](const Matrix& p) {
    std::vector<double> scores(p.rows());
    for (std::size_t i = 0; i < p.rows(); ++i) scores[i] = p(i, 1);
    auto order = rank_desc(scores, ids);
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
  };
  auto ta = top_of(pa);
  auto tb = top_of(pb);
  std::vector<std::size_t> both;
  std::set_intersection(ta.begin(), ta.end(), tb.begin(), tb.end(),
                        std::back_inserter(both));
  const double inter = static_cast<double>(both.size());
  const double uni = static_cast<double>(ta.size() + tb.size()) - inter;
  return inter / uni;
}

double topk_hit_rate(const Matrix& p, std::span<const double> labels,
                     std::size_t k, std::span<const std::string> ids) {
  if (p.rows() != labels.size() || p.rows() != ids.size()) {
    throw std::invalid_argument("topk_hit_rate: shape mismatch");
  }
  if (k < 1 || k > p.rows()) {
    throw std::invalid_argument("topk_hit_rate: k out of range [1, n]");
  }
  std::vector<double> scores(p.rows());
  for (std::size_t i = 0; i < p.rows(); ++i) scores[i] = p(i, 1);
  auto order = rank_desc(scores, ids);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < k; ++i) hits += labels[order[i]] > 0.5;
  return static_cast<double>(hits) / static_cast<double>(k);
}

double predictive_entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(std::max(v, kProbFloor));
  }
  return h;
}

FlipRecallCurve flip_recall_curve(std::span<const double> scores,
                                  std::span<const double> flip_mass) {
  const std::size_t n = scores.size();
  if (n == 0 || flip_mass.size() != n) {
    throw std::invalid_argument("flip_recall_curve: size mismatch or empty");
  }
  double total = 0.0;
  for (double m : flip_mass) {
    if (m < 0.0) throw std::invalid_argument("flip mass must be non-negative");
    total += m;
  }
  if (total <= 0.0) {
    throw std::invalid_argument("flip_recall_curve: total flip mass is zero");
  }

  auto curve_for = [&](std::span<const double> ranking_scores) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (ranking_scores[a] != ranking_scores[b]) {
        return ranking_scores[a] > ranking_scores[b];
      }
      return a < b;
    });
    std::vector<double> rec(n + 1, 0.0);
    double cum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      cum += flip_mass[order[k]];
      rec[k + 1] = cum / total;
    }
    return rec;
  };

  auto area_of = [&](const std::vector<double>& rec) {
    // precision at k rows reviewed = captured mass fraction / k.
    double area = 0.0;
    double prev_c = 1.0 / static_cast<double>(n);
    double prev_p = rec[1] / 1.0;
    for (std::size_t k = 2; k <= n; ++k) {
      const double c = static_cast<double>(k) / static_cast<double>(n);
      const double p = rec[k] / static_cast<double>(k);
      area += (c - prev_c) * (p + prev_p) * 0.5;
      prev_c = c;
      prev_p = p;
    }
    return area;
  };

  FlipRecallCurve out;
  out.recall = curve_for(scores);
  out.reviewed_frac.resize(n + 1);
  for (std::size_t k = 0; k <= n; ++k) {
    out.reviewed_frac[k] = static_cast<double>(k) / static_cast<double>(n);
  }
  out.aupc_raw = area_of(out.recall);
  const double perfect = area_of(curve_for(flip_mass));
  out.aupc_norm = perfect > 0.0 ? out.aupc_raw / perfect : 0.0;
  return out;
}

double recall_at(const FlipRecallCurve& curve, double q) {
  if (q <= 0.0 || q > 1.0) {
    throw std::invalid_argument("recall_at: q must be in (0, 1]");
  }
  const std::size_t n = curve.recall.size() - 1;
  const auto k = static_cast<std::size_t>(
      std::ceil(q * static_cast<double>(n) - 1e-12));
  return curve.recall[std::min(k, n)];
}

void save_prediction_set(const PredictionSet& ps, const std::string& path) {
  validate_prediction_set(ps);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write prediction set: " + path);
  if (ps.task == Task::binary_classification) {
    out << "seed,id,p0,p1\n";
  } else {
    out << "seed,id,yhat\n";
  }
  for (std::size_t s = 0; s < ps.seeds.size(); ++s) {
    for (std::size_t r = 0; r < ps.ids.size(); ++r) {
      out << ps.seeds[s] << "," << ps.ids[r];
      for (double v : ps.predictions[s].row(r)) out << "," << fmt_double(v);
      out << "\n";
    }
  }
}

PredictionSet load_prediction_set(const std::string& path, Task task) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open prediction set: " + path);
  std::string line;
  if (!std::getline(in, line)) {
    throw std::invalid_argument("prediction set file is empty: " + path);
  }
  const std::string expected_header =
      task == Task::binary_classification ? "seed,id,p0,p1" : "seed,id,yhat";
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != expected_header) {
    throw std::invalid_argument("malformed prediction header: expected '" +
                                expected_header + "', got '" + line + "'");
  }
  const std::size_t c = expected_cols(task);

  PredictionSet ps;
  ps.task = task;
  std::vector<double> flat;
  std::vector<std::string> block_ids;
  std::size_t line_no = 1;
  auto flush_block = [&]() {
    if (block_ids.empty()) return;
    if (ps.ids.empty()) {
      ps.ids = block_ids;
    } else if (ps.ids != block_ids) {
      throw std::invalid_argument(
          "prediction set: seed blocks list different ids or orders");
    }
    Matrix m(block_ids.size(), c);
    m.data() = std::move(flat);
    ps.predictions.push_back(std::move(m));
    flat.clear();
    block_ids.clear();
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::string cur;
    for (char ch : line) {
      if (ch == ',') {
        cells.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
    cells.push_back(cur);
    if (cells.size() != 2 + c) {
      throw std::invalid_argument("prediction line " + std::to_string(line_no) +
                                  ": wrong column count");
    }
    std::uint64_t seed = 0;
    auto [p1, e1] = std::from_chars(cells[0].data(),
                                    cells[0].data() + cells[0].size(), seed);
    if (e1 != std::errc{} || p1 != cells[0].data() + cells[0].size()) {
      throw std::invalid_argument("prediction line " + std::to_string(line_no) +
                                  ": bad seed '" + cells[0] + "'");
    }
    if (ps.seeds.empty() || ps.seeds.back() != seed) {
      flush_block();
      ps.seeds.push_back(seed);
    }
    block_ids.push_back(cells[1]);
    for (std::size_t j = 0; j < c; ++j) {
      double v = 0.0;
      const std::string& cell = cells[2 + j];
      auto [p2, e2] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (e2 != std::errc{} || p2 != cell.data() + cell.size()) {
        throw std::invalid_argument("prediction line " +
                                    std::to_string(line_no) +
                                    ": bad value '" + cell + "'");
      }
      flat.push_back(v);
    }
  }
  flush_block();
  // A seed id may not reappear after its block closed.
  for (std::size_t i = 0; i < ps.seeds.size(); ++i) {
    for (std::size_t j = i + 1; j < ps.seeds.size(); ++j) {
      if (ps.seeds[i] == ps.seeds[j]) {
        throw std::invalid_argument("prediction set: seed blocks interleaved");
      }
    }
  }
  validate_prediction_set(ps);
  return ps;
}

}  // namespace churnkit
