#include "churnkit/report.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace churnkit {

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open output file: " + path);
  return out;
}

void stamp_meta(std::ofstream& out, const ReportMeta& meta) {
  out << "# config_hash=" << meta.config_hash << "\n";
  out << "# seeds=" << meta.seeds << "\n";
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

double parse_field_double(const std::string& s, const std::string& path) {
  if (s == "nan" || s == "-nan") {
    return std::numeric_limits<double>::quiet_NaN();
  }
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::invalid_argument(path + ": bad numeric field '" + s + "'");
  }
  return v;
}

std::string ci_cell(double mean, double lo, double hi) {
  if (lo == mean && hi == mean) return format_double(mean);
  return format_double(mean) + " [" + format_double(lo) + ", " +
         format_double(hi) + "]";
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

void write_rows_csv(const std::string& path, const std::vector<MetricRow>& rows,
                    const ReportMeta& meta) {
  std::ofstream out = open_out(path);
  stamp_meta(out, meta);
  out << "dataset,n,method,replicate,metric,mean,lo,hi\n";
  for (const MetricRow& r : rows) {
    out << r.dataset << ',' << r.n << ',' << r.method << ',' << r.replicate
        << ',' << r.metric << ',' << format_double(r.mean) << ','
        << format_double(r.lo) << ',' << format_double(r.hi) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<MetricRow> read_rows_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open rows file: " + path);
  std::vector<MetricRow> rows;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (!header_seen) {
      if (line != "dataset,n,method,replicate,metric,mean,lo,hi") {
        throw std::invalid_argument(path + ": unexpected header '" + line +
                                    "'");
      }
      header_seen = true;
      continue;
    }
    const std::vector<std::string> f = split_fields(line);
    if (f.size() != 8) {
      throw std::invalid_argument(path + ": expected 8 fields, got " +
                                  std::to_string(f.size()));
    }
    MetricRow r;
    r.dataset = f[0];
    r.n = static_cast<std::size_t>(parse_field_double(f[1], path));
    r.method = f[2];
    r.replicate = f[3];
    r.metric = f[4];
    r.mean = parse_field_double(f[5], path);
    r.lo = parse_field_double(f[6], path);
    r.hi = parse_field_double(f[7], path);
    rows.push_back(std::move(r));
  }
  if (!header_seen) {
    throw std::invalid_argument(path + ": missing header line");
  }
  return rows;
}

std::string markdown_pivot(const std::vector<MetricRow>& rows,
                           const std::string& replicate) {
  std::vector<std::string> methods, metrics;
  for (const MetricRow& r : rows) {
    if (r.replicate != replicate) continue;
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) {
      methods.push_back(r.method);
    }
    if (std::find(metrics.begin(), metrics.end(), r.metric) == metrics.end()) {
      metrics.push_back(r.metric);
    }
  }
  if (methods.empty()) return "";

  std::ostringstream md;
  md << "| method |";
  for (const std::string& m : metrics) md << ' ' << m << " |";
  md << "\n|---|";
  for (std::size_t i = 0; i < metrics.size(); ++i) md << "---|";
  md << '\n';
  for (const std::string& method : methods) {
    md << "| " << method << " |";
    for (const std::string& metric : metrics) {
      const MetricRow* found = nullptr;
      for (const MetricRow& r : rows) {
        if (r.replicate == replicate && r.method == method &&
            r.metric == metric) {
          found = &r;
          break;
        }
      }
      md << ' ' << (found ? ci_cell(found->mean, found->lo, found->hi) : "-")
         << " |";
    }
    md << '\n';
  }
  return md.str();
}

std::string markdown_footprint(const std::vector<FootprintRow>& rows) {
  std::ostringstream md;
  md << "| Method | Train fwd/step | Train bwd/step | Test models | "
        "Wall-clock vs ERM |\n|---|---|---|---|---|\n";
  for (const FootprintRow& r : rows) {
    md << "| " << r.method << " | " << r.train_forwards_per_step << " | "
       << r.train_backwards_per_step << (r.joint_backward ? " (joint)" : "")
       << " | " << r.test_models << " | " << r.wallclock << " |\n";
  }
  return md.str();
}

void write_footprint_csv(const std::string& path,
                         const std::vector<FootprintRow>& rows,
                         const ReportMeta& meta) {
  std::ofstream out = open_out(path);
  stamp_meta(out, meta);
  out << "method,train_fwd_per_step,train_bwd_per_step,joint_backward,"
         "test_models,wallclock\n";
  for (const FootprintRow& r : rows) {
    out << r.method << ',' << r.train_forwards_per_step << ','
        << r.train_backwards_per_step << ',' << (r.joint_backward ? 1 : 0)
        << ',' << r.test_models << ',' << r.wallclock << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_sweep_csv(const std::string& path, const LambdaSweepResult& sweep,
                     const ReportMeta& meta) {
  std::ofstream out = open_out(path);
  stamp_meta(out, meta);
  out << "# erm_accuracy=" << format_double(sweep.erm_accuracy.mean) << " lo="
      << format_double(sweep.erm_accuracy.lo) << " hi="
      << format_double(sweep.erm_accuracy.hi) << "\n";
  out << "# selected_lambda="
      << (sweep.selected ? format_double(*sweep.selected) : "none") << "\n";
  out << "lambda,acc_mean,acc_lo,acc_hi,churn_mean,churn_lo,churn_hi,"
         "symkl_mean,symkl_lo,symkl_hi,inter_head_symkl\n";
  for (const SweepPoint& p : sweep.points) {
    out << format_double(p.lambda) << ',' << format_double(p.accuracy.mean)
        << ',' << format_double(p.accuracy.lo) << ','
        << format_double(p.accuracy.hi) << ',' << format_double(p.churn.mean)
        << ',' << format_double(p.churn.lo) << ',' << format_double(p.churn.hi)
        << ',' << format_double(p.symkl.mean) << ','
        << format_double(p.symkl.lo) << ',' << format_double(p.symkl.hi) << ','
        << format_double(p.inter_head_symkl) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_scaling_csv(const std::string& path, const ScalingResult& scaling,
                       const ReportMeta& meta) {
  std::ofstream out = open_out(path);
  stamp_meta(out, meta);
  out << "# slope_symkl=" << format_double(scaling.slope_symkl)
      << " slope_churn=" << format_double(scaling.slope_churn) << "\n";
  out << "m,churn_mean,churn_lo,churn_hi,symkl_mean,symkl_lo,symkl_hi\n";
  for (const ScalingPoint& p : scaling.points) {
    out << p.m << ',' << format_double(p.churn.mean) << ','
        << format_double(p.churn.lo) << ',' << format_double(p.churn.hi) << ','
        << format_double(p.symkl.mean) << ',' << format_double(p.symkl.lo)
        << ',' << format_double(p.symkl.hi) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_triage_csv(const std::string& path, const TriageResult& triage,
                      const ReportMeta& meta) {
  std::ofstream out = open_out(path);
  stamp_meta(out, meta);
  out << "# review_frac=" << format_double(triage.review_frac)
      << " gold_recall=" << format_double(triage.gold_recall) << "\n";
  out << "subset_size,n_subsets,mean_recall\n";
  for (const TriageRow& r : triage.rows) {
    out << r.subset_size << ',' << r.n_subsets << ','
        << format_double(r.mean_recall) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_entropy_csv(const std::string& path, const EntropyChurnResult& result,
                       const ReportMeta& meta) {
  std::ofstream out = open_out(path);
  stamp_meta(out, meta);
  out << "# review_frac=" << format_double(result.review_frac) << "\n";
  out << "score,recall_at_frac,aupc_raw,aupc_norm\n";
  for (const ScoreComparisonRow& r : result.rows) {
    out << r.score_name << ',' << format_double(r.recall_at_frac) << ','
        << format_double(r.aupc_raw) << ',' << format_double(r.aupc_norm)
        << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_overlap_csv(const std::string& path,
                       const std::vector<OverlapRow>& rows,
                       const ReportMeta& meta) {
  std::ofstream out = open_out(path);
  stamp_meta(out, meta);
  out << "mode,measured_overlap,erm_acc,twin_acc,delta_churn_mean,"
         "delta_churn_lo,delta_churn_hi,delta_acc_mean,delta_acc_lo,"
         "delta_acc_hi,collapse\n";
  for (const OverlapRow& r : rows) {
    out << overlap_mode_name(r.mode) << ',' << format_double(r.measured_overlap)
        << ',' << format_double(r.erm_accuracy) << ','
        << format_double(r.twin_accuracy) << ','
        << format_double(r.delta_churn.mean) << ','
        << format_double(r.delta_churn.lo) << ','
        << format_double(r.delta_churn.hi) << ','
        << format_double(r.delta_accuracy.mean) << ','
        << format_double(r.delta_accuracy.lo) << ','
        << format_double(r.delta_accuracy.hi) << ',' << (r.collapse ? 1 : 0)
        << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_bo_trials_csv(const std::string& path, const BoLambdaResult& result,
                         const ReportMeta& meta) {
  std::ofstream out = open_out(path);
  stamp_meta(out, meta);
  out << "# lambda_star=" << format_double(result.lambda_star) << "\n";
  out << "trial,lambda,val_acc,val_churn,score\n";
  for (const BoTrial& t : result.trials) {
    out << t.trial << ',' << format_double(t.lambda) << ','
        << format_double(t.mean_acc) << ',' << format_double(t.mean_churn)
        << ',' << format_double(t.score) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_trajectories_csv(const std::string& path,
                            const std::vector<Trajectory>& trajectories,
                            std::span<const std::string> ids,
                            const ReportMeta& meta) {
  std::ofstream out = open_out(path);
  stamp_meta(out, meta);
  out << "trajectory,step,row,id,y,best_so_far\n";
  for (const Trajectory& t : trajectories) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < t.acquired.size(); ++i) {
      best = std::max(best, t.acquired_y[i]);
      out << t.index << ',' << (i + 1) << ',' << t.acquired[i] << ','
          << ids[t.acquired[i]] << ',' << format_double(t.acquired_y[i]) << ','
          << format_double(best) << '\n';
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_trajectory_summary_csv(
    const std::string& path,
    const std::vector<std::pair<std::string, TrajectoryReport>>& reports,
    const ReportMeta& meta) {
  std::ofstream out = open_out(path);
  stamp_meta(out, meta);
  out << "method,final_best_mean,final_best_std,mean_lo,mean_hi,std_lo,"
         "std_hi,std_over_range_pct,mean_jaccard\n";
  for (const auto& [method, rep] : reports) {
    out << method << ',' << format_double(rep.final_best_mean) << ','
        << format_double(rep.final_best_std) << ','
        << format_double(rep.mean_ci.lo) << ',' << format_double(rep.mean_ci.hi)
        << ',' << format_double(rep.std_ci.lo) << ','
        << format_double(rep.std_ci.hi) << ','
        << format_double(rep.std_over_range_pct) << ','
        << format_double(rep.mean_jaccard) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_curve_csv(const std::string& path, const FlipRecallCurve& curve,
                     const ReportMeta& meta) {
  std::ofstream out = open_out(path);
  stamp_meta(out, meta);
  out << "# aupc_raw=" << format_double(curve.aupc_raw)
      << " aupc_norm=" << format_double(curve.aupc_norm) << "\n";
  out << "reviewed_frac,recall\n";
  for (std::size_t i = 0; i < curve.recall.size(); ++i) {
    out << format_double(curve.reviewed_frac[i]) << ','
        << format_double(curve.recall[i]) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_pairs_csv(const std::string& path, const PairwiseChurn& churn,
                     std::span<const std::uint64_t> seeds,
                     const ReportMeta& meta) {
  const bool with_symkl = !churn.pair_symkl.empty();
  std::ofstream out = open_out(path);
  stamp_meta(out, meta);
  out << "# mean_churn=" << format_double(churn.mean_churn);
  if (with_symkl) out << " mean_symkl=" << format_double(churn.mean_symkl);
  out << "\n";
  out << (with_symkl ? "seed_i,seed_j,churn,symkl" : "seed_i,seed_j,churn")
      << '\n';
  for (std::size_t p = 0; p < churn.pairs.size(); ++p) {
    const auto [i, j] = churn.pairs[p];
    out << seeds[i] << ',' << seeds[j] << ','
        << format_double(churn.pair_argmax_churn[p]);
    if (with_symkl) out << ',' << format_double(churn.pair_symkl[p]);
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_stripe_csv(const std::string& path, const PredictionSet& ps,
                      const ReportMeta& meta) {
  validate_prediction_set(ps);
  if (ps.task != Task::binary_classification) {
    throw std::invalid_argument("stripe plots require classification");
  }
  const PairwiseChurn churn = pairwise_churn(ps);
  const std::size_t n = ps.ids.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (churn.per_example_churn[a] != churn.per_example_churn[b]) {
      return churn.per_example_churn[a] > churn.per_example_churn[b];
    }
    return ps.ids[a] < ps.ids[b];
  });

  std::ofstream out = open_out(path);
  stamp_meta(out, meta);
  out << "id,churn,flip_count";
  for (std::size_t s = 0; s < ps.seeds.size(); ++s) out << ",cls_seed" << s;
  out << '\n';
  for (std::size_t r : order) {
    out << ps.ids[r] << ',' << format_double(churn.per_example_churn[r]) << ','
        << format_double(churn.per_example_flip_count[r]);
    for (const Matrix& pred : ps.predictions) {
      out << ',' << argmax_row(pred.row(r));
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_json_summary(const std::string& path, const std::string& dataset,
                        const std::vector<MetricRow>& rows,
                        const ReportMeta& meta) {
  nlohmann::json j;
  j["config_hash"] = meta.config_hash;
  j["seeds"] = meta.seeds;
  j["dataset"] = dataset;
  nlohmann::json jrows = nlohmann::json::array();
  for (const MetricRow& r : rows) {
    jrows.push_back({{"dataset", r.dataset},
                     {"n", r.n},
                     {"method", r.method},
                     {"replicate", r.replicate},
                     {"metric", r.metric},
                     {"mean", r.mean},
                     {"lo", r.lo},
                     {"hi", r.hi}});
  }
  j["rows"] = std::move(jrows);
  std::ofstream out = open_out(path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace churnkit
