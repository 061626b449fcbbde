#pragma once

#include <string>
#include <utility>
#include <vector>

#include "churnkit/bo.hpp"
#include "churnkit/metrics.hpp"
#include "churnkit/protocol.hpp"

namespace churnkit {

// Provenance stamped as comment lines at the top of every artifact.
struct ReportMeta {
  std::string config_hash;  // 16 hex chars
  std::string seeds;        // human-readable seed summary
};

// Shortest decimal that round-trips the double (to_chars); "nan"/"inf" pass
// through, so artifacts are byte-stable across runs.
std::string format_double(double v);

// Main-table rows: "dataset,n,method,replicate,metric,mean,lo,hi".
void write_rows_csv(const std::string& path, const std::vector<MetricRow>& rows,
                    const ReportMeta& meta);
std::vector<MetricRow> read_rows_csv(const std::string& path);

// One Markdown table per replicate: methods down, metrics across, cells
// "mean [lo, hi]" (bare mean for point metrics).
std::string markdown_pivot(const std::vector<MetricRow>& rows,
                           const std::string& replicate);
std::string markdown_footprint(const std::vector<FootprintRow>& rows);

void write_footprint_csv(const std::string& path,
                         const std::vector<FootprintRow>& rows,
                         const ReportMeta& meta);
void write_sweep_csv(const std::string& path, const LambdaSweepResult& sweep,
                     const ReportMeta& meta);
void write_scaling_csv(const std::string& path, const ScalingResult& scaling,
                       const ReportMeta& meta);
void write_triage_csv(const std::string& path, const TriageResult& triage,
                      const ReportMeta& meta);
void write_entropy_csv(const std::string& path, const EntropyChurnResult& result,
                       const ReportMeta& meta);
void write_overlap_csv(const std::string& path,
                       const std::vector<OverlapRow>& rows,
                       const ReportMeta& meta);
// "trial,lambda,val_acc,val_churn,score" plus a lambda_star comment.
void write_bo_trials_csv(const std::string& path, const BoLambdaResult& result,
                         const ReportMeta& meta);
void write_trajectories_csv(const std::string& path,
                            const std::vector<Trajectory>& trajectories,
                            std::span<const std::string> ids,
                            const ReportMeta& meta);
void write_trajectory_summary_csv(
    const std::string& path,
    const std::vector<std::pair<std::string, TrajectoryReport>>& reports,
    const ReportMeta& meta);
void write_curve_csv(const std::string& path, const FlipRecallCurve& curve,
                     const ReportMeta& meta);
// Per-pair churn/sym-KL rows ("seed_i,seed_j,churn[,symkl]").
void write_pairs_csv(const std::string& path, const PairwiseChurn& churn,
                     std::span<const std::uint64_t> seeds,
                     const ReportMeta& meta);
// Seed-stripe plot data: one row per test example sorted by per-example churn
// (descending, ties by id), with each seed's predicted class.
void write_stripe_csv(const std::string& path, const PredictionSet& ps,
                      const ReportMeta& meta);
// Machine-readable run summary (config hash, seeds, dataset, rows).
void write_json_summary(const std::string& path, const std::string& dataset,
                        const std::vector<MetricRow>& rows,
                        const ReportMeta& meta);

}  // namespace churnkit
