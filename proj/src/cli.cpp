#include "churnkit/cli.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "churnkit/bo.hpp"
#include "churnkit/config.hpp"
#include "churnkit/dataio.hpp"
#include "churnkit/methods.hpp"
#include "churnkit/metrics.hpp"
#include "churnkit/protocol.hpp"
#include "churnkit/report.hpp"
#include "churnkit/rng.hpp"

namespace churnkit {

namespace {

std::string join_u64(const std::vector<std::uint64_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

ReportMeta make_meta(const RunConfig& cfg) {
  ReportMeta meta;
  meta.config_hash = config_hash_hex(cfg.raw);
  meta.seeds = "train=" + std::to_string(cfg.comparison.n_seeds) +
               " canonical=" + join_u64(cfg.comparison.canonical_seeds) +
               " synth=" + std::to_string(cfg.synth_seed) +
               " ci=" + std::to_string(cfg.comparison.ci_seed);
  return meta;
}

std::string out_path(const RunConfig& cfg, const std::string& file) {
  std::filesystem::create_directories(cfg.out_dir);
  return (std::filesystem::path(cfg.out_dir) / file).string();
}

Task parse_task_flag(const std::string& task) {
  if (task == "classification") return Task::binary_classification;
  if (task == "regression") return Task::regression;
  throw std::invalid_argument("--task must be classification or regression");
}

int cmd_synth(const RunConfig& cfg) {
  Dataset ds = generate_synthetic(cfg.synthetic, cfg.synth_seed);
  ds.name = cfg.dataset_name;
  const std::string path = out_path(cfg, ds.name + ".csv");
  save_dataset(ds, path);
  std::cout << "wrote " << path << " (" << ds.n() << " rows, " << ds.dim()
            << " features, "
            << (ds.task == Task::binary_classification ? "classification"
                                                       : "regression")
            << ")\n";
  return 0;
}

int cmd_churn(const RunConfig& cfg, const std::string& predictions_path,
              const std::string& task_flag) {
  const PredictionSet ps =
      load_prediction_set(predictions_path, parse_task_flag(task_flag));
  const PairwiseChurn churn = pairwise_churn(ps);
  const ReportMeta meta = make_meta(cfg);
  write_pairs_csv(out_path(cfg, "churn_pairs.csv"), churn, ps.seeds, meta);
  if (ps.task == Task::binary_classification) {
    write_stripe_csv(out_path(cfg, "churn_examples.csv"), ps, meta);
  }
  std::cout << "churn over " << churn.pairs.size()
            << " pair(s): mean=" << format_double(churn.mean_churn);
  if (!churn.pair_symkl.empty()) {
    std::cout << " symkl=" << format_double(churn.mean_symkl);
  }
  std::cout << '\n';
  return 0;
}

int cmd_compare(RunConfig cfg, bool dump_predictions) {
  cfg.comparison.keep_predictions = dump_predictions;
  const Dataset ds = load_config_dataset(cfg);
  const ComparisonResult result =
      run_comparison(ds, cfg.methods, cfg.comparison);
  const ReportMeta meta = make_meta(cfg);
  write_rows_csv(out_path(cfg, "compare_rows.csv"), result.rows, meta);
  write_json_summary(out_path(cfg, "compare.json"), result.dataset, result.rows,
                     meta);

  std::string md;
  for (std::uint64_t cs : cfg.comparison.canonical_seeds) {
    md += "## replicate " + std::to_string(cs) + "\n\n" +
          markdown_pivot(result.rows, std::to_string(cs)) + "\n";
  }
  if (cfg.comparison.canonical_seeds.size() > 1) {
    md += "## replicate mean\n\n" + markdown_pivot(result.rows, "mean") + "\n";
  }
  {
    std::ofstream out(out_path(cfg, "compare.md"));
    out << md;
  }

  if (dump_predictions) {
    for (const ComparisonCell& cell : result.cells) {
      save_prediction_set(cell.predictions,
                          out_path(cfg, "pred_" + cell.method + "_rep" +
                                            std::to_string(cell.canonical_seed) +
                                            ".csv"));
    }
  }

  for (std::size_t i = 0; i < result.filters.size(); ++i) {
    const FilterOutcome& f = result.filters[i];
    std::cout << "majority filter (replicate "
              << cfg.comparison.canonical_seeds[i]
              << "): " << filter_verdict_name(f.verdict) << " (gap "
              << format_double(f.gap_pp) << " pp, test n " << f.test_n << ")\n";
  }
  std::cout << md;
  return 0;
}

int cmd_sweep_lambda(const RunConfig& cfg) {
  const Dataset ds = load_config_dataset(cfg);
  LambdaSweepResult sweep =
      sweep_lambda(ds, cfg.lambda_grid, cfg.train, cfg.comparison);
  sweep.selected = select_lambda(sweep.points, sweep.erm_accuracy.mean,
                                 cfg.select_tolerance);
  write_sweep_csv(out_path(cfg, "sweep.csv"), sweep, make_meta(cfg));
  std::cout << "erm accuracy " << format_double(sweep.erm_accuracy.mean)
            << '\n';
  for (const SweepPoint& p : sweep.points) {
    std::cout << "lambda " << format_double(p.lambda) << ": acc "
              << format_double(p.accuracy.mean) << " churn "
              << format_double(p.churn.mean) << " symkl "
              << format_double(p.symkl.mean) << " inter-head symkl "
              << format_double(p.inter_head_symkl) << '\n';
  }
  std::cout << "selected lambda: "
            << (sweep.selected ? format_double(*sweep.selected)
                               : std::string("none"))
            << " (tolerance " << format_double(cfg.select_tolerance) << ")\n";
  return 0;
}

int cmd_bo_lambda(const RunConfig& cfg) {
  if (cfg.bo_seeds == 0) {
    throw std::invalid_argument("bo.seeds must be >= 1");
  }
  const Dataset ds = load_config_dataset(cfg);
  const Split split = make_canonical_split(
      ds, cfg.comparison.canonical_seeds.at(0), cfg.comparison.test_frac);
  const ReportMeta meta = make_meta(cfg);

  std::vector<BoLambdaResult> results(cfg.bo_seeds);
  parallel_for(results.size(), cfg.comparison.jobs, [&](std::size_t s) {
    const std::uint64_t train_seed =
        seed_combine(cfg.comparison.canonical_seeds.at(0), s);
    results[s] =
        bo_lambda_search(ds, split.train_pool, cfg.train, train_seed, cfg.bo);
  });

  std::vector<double> stars;
  for (std::size_t s = 0; s < results.size(); ++s) {
    write_bo_trials_csv(
        out_path(cfg, "bo_trials_seed" + std::to_string(s) + ".csv"),
        results[s], meta);
    stars.push_back(results[s].lambda_star);
    std::cout << "seed " << s << ": lambda* = "
              << format_double(results[s].lambda_star) << '\n';
  }
  const double median = median_lambda(stars);
  {
    std::ofstream out(out_path(cfg, "bo_lambda.csv"));
    out << "# config_hash=" << meta.config_hash << "\n# seeds=" << meta.seeds
        << "\n# median_lambda=" << format_double(median)
        << "\nseed,lambda_star\n";
    for (std::size_t s = 0; s < stars.size(); ++s) {
      out << s << ',' << format_double(stars[s]) << '\n';
    }
  }
  std::cout << "median lambda* over " << stars.size()
            << " seed(s): " << format_double(median) << '\n';
  return 0;
}

int cmd_bo_loop(const RunConfig& cfg) {
  const Dataset ds = load_config_dataset(cfg);
  if (ds.task != Task::regression) {
    throw std::invalid_argument("bo-loop requires a regression dataset");
  }
  const auto [lo_it, hi_it] =
      std::minmax_element(ds.targets.begin(), ds.targets.end());
  const double y_range = *hi_it - *lo_it;
  if (y_range <= 0.0) {
    throw std::invalid_argument("bo-loop: target range is zero");
  }
  const ReportMeta meta = make_meta(cfg);

  std::vector<std::pair<std::string, TrajectoryReport>> reports;
  for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
    const MethodSpec& spec = cfg.methods[mi];
    std::vector<Trajectory> trajectories(cfg.loop_trajectories);
    parallel_for(trajectories.size(), cfg.comparison.jobs, [&](std::size_t k) {
      trajectories[k] = bo_trajectory(ds, spec, k, cfg.loop_budget,
                                      cfg.loop_init, cfg.loop_init_seed);
    });
    const std::string label = method_label(spec);
    write_trajectories_csv(out_path(cfg, "trajectories_" + label + ".csv"),
                           trajectories, ds.ids, meta);
    const TrajectoryReport report = trajectory_report(
        trajectories, y_range, cfg.comparison.ci_resamples,
        Rng::key_for("ci-loop", {cfg.comparison.ci_seed, mi}));
    std::cout << label << ": final best " << format_double(report.final_best_mean)
              << " +/- " << format_double(report.final_best_std)
              << " (std/range " << format_double(report.std_over_range_pct)
              << "%, jaccard " << format_double(report.mean_jaccard) << ")\n";
    reports.emplace_back(label, report);
  }
  write_trajectory_summary_csv(out_path(cfg, "bo_loop_summary.csv"), reports,
                               meta);
  return 0;
}

int cmd_triage(const RunConfig& cfg, const std::string& predictions_path) {
  PredictionSet ps;
  if (!predictions_path.empty()) {
    ps = load_prediction_set(predictions_path, Task::binary_classification);
  } else {
    const Dataset ds = load_config_dataset(cfg);
    ps = predict_method_on_split(ds, cfg.methods.front(), cfg.comparison);
  }
  const ReportMeta meta = make_meta(cfg);

  const TriageResult triage =
      triage_convergence(ps, cfg.triage_sizes, cfg.triage_subsets,
                         cfg.triage_review_frac, cfg.triage_seed);
  write_triage_csv(out_path(cfg, "triage.csv"), triage, meta);

  const EntropyChurnResult entropy =
      entropy_vs_churn(ps, cfg.entropy_seed_index, cfg.entropy_review_frac);
  write_entropy_csv(out_path(cfg, "entropy.csv"), entropy, meta);

  const PairwiseChurn gold = pairwise_churn(ps);
  write_curve_csv(out_path(cfg, "triage_curve.csv"),
                  flip_recall_curve(gold.per_example_flip_count,
                                    gold.per_example_flip_count),
                  meta);

  std::cout << "gold recall@" << format_double(triage.review_frac) << " = "
            << format_double(triage.gold_recall) << '\n';
  for (const TriageRow& row : triage.rows) {
    std::cout << "K'=" << row.subset_size << ": mean recall "
              << format_double(row.mean_recall) << " over " << row.n_subsets
              << " subset(s)\n";
  }
  for (const ScoreComparisonRow& row : entropy.rows) {
    std::cout << row.score_name << ": recall@"
              << format_double(entropy.review_frac) << " = "
              << format_double(row.recall_at_frac) << ", aupc_norm "
              << format_double(row.aupc_norm) << '\n';
  }
  return 0;
}

int cmd_nscale(const RunConfig& cfg) {
  if (cfg.m_grid.empty()) {
    throw std::invalid_argument("nscale.grid must list the pool prefix sizes");
  }
  const Dataset ds = load_config_dataset(cfg);
  const ScalingResult scaling =
      n_scaling(ds, cfg.m_grid, cfg.train, cfg.comparison);
  write_scaling_csv(out_path(cfg, "nscale.csv"), scaling, make_meta(cfg));
  for (const ScalingPoint& p : scaling.points) {
    std::cout << "M=" << p.m << ": churn " << format_double(p.churn.mean)
              << " symkl " << format_double(p.symkl.mean) << '\n';
  }
  std::cout << "log-log slope: symkl " << format_double(scaling.slope_symkl)
            << ", churn " << format_double(scaling.slope_churn) << '\n';
  return 0;
}

int cmd_overlap(const RunConfig& cfg) {
  const Dataset ds = load_config_dataset(cfg);
  const std::vector<OverlapRow> rows =
      overlap_spectrum(ds, cfg.overlap_lambda, cfg.train, cfg.comparison);
  write_overlap_csv(out_path(cfg, "overlap.csv"), rows, make_meta(cfg));
  for (const OverlapRow& r : rows) {
    std::cout << overlap_mode_name(r.mode) << ": overlap "
              << format_double(r.measured_overlap) << ", delta churn "
              << format_double(r.delta_churn.mean) << " ["
              << format_double(r.delta_churn.lo) << ", "
              << format_double(r.delta_churn.hi) << "], acc "
              << format_double(r.twin_accuracy) << " vs erm "
              << format_double(r.erm_accuracy)
              << (r.collapse ? " (collapse)" : "") << '\n';
  }
  return 0;
}

int cmd_footprint(const RunConfig& cfg) {
  const std::vector<FootprintRow> rows = footprint_table();
  write_footprint_csv(out_path(cfg, "footprint.csv"), rows, make_meta(cfg));
  std::cout << markdown_footprint(rows);
  return 0;
}

int cmd_report(const RunConfig& cfg, const std::string& rows_path) {
  const std::vector<MetricRow> rows = read_rows_csv(rows_path);
  std::vector<std::string> replicates;
  for (const MetricRow& r : rows) {
    if (std::find(replicates.begin(), replicates.end(), r.replicate) ==
        replicates.end()) {
      replicates.push_back(r.replicate);
    }
  }
  std::string md;
  for (const std::string& rep : replicates) {
    md += "## replicate " + rep + "\n\n" + markdown_pivot(rows, rep) + "\n";
  }
  {
    std::ofstream out(out_path(cfg, "report.md"));
    out << md;
  }
  std::cout << md;
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"cross-sample prediction churn toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may appear after the subcommand name

  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed_flag;
  std::optional<std::size_t> jobs_flag;
  std::string out_flag;
  app.add_option("--config", config_path, "key=value config file");
  app.add_option("-D,--define", overrides,
                 "config override key=value (repeatable, wins over --config "
                 "and the dedicated flags)");
  app.add_option("--seed", seed_flag,
                 "base seed (sets synth.seed and ci.seed)");
  app.add_option("--jobs", jobs_flag, "worker threads (sets jobs)");
  app.add_option("--out", out_flag, "output directory (sets out.dir)");

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  CLI::App* churn =
      app.add_subcommand("churn", "churn report for a stored prediction set");
  std::string churn_predictions, churn_task = "classification";
  churn->add_option("--predictions", churn_predictions, "prediction set CSV")
      ->required();
  churn->add_option("--task", churn_task, "classification|regression");
  CLI::App* compare =
      app.add_subcommand("compare", "canonical-seed method comparison");
  bool dump_predictions = false;
  compare->add_flag("--dump-predictions", dump_predictions,
                    "also save every cell's prediction set");
  CLI::App* sweep =
      app.add_subcommand("sweep-lambda", "consistency-weight sweep and rule");
  CLI::App* bo_lambda = app.add_subcommand(
      "bo-lambda", "GP-EI search for the consistency weight");
  CLI::App* bo_loop = app.add_subcommand(
      "bo-loop", "greedy acquisition trajectory stability study");
  CLI::App* triage =
      app.add_subcommand("triage", "flip-triage convergence and score shootout");
  std::string triage_predictions;
  triage->add_option("--predictions", triage_predictions,
                     "use a stored prediction set instead of retraining");
  CLI::App* nscale =
      app.add_subcommand("nscale", "churn versus training-set size");
  CLI::App* overlap =
      app.add_subcommand("overlap", "twin loader-overlap spectrum");
  CLI::App* footprint =
      app.add_subcommand("footprint", "per-method compute accounting");
  CLI::App* report =
      app.add_subcommand("report", "regenerate tables from a stored rows CSV");
  std::string report_rows;
  report->add_option("--rows", report_rows, "rows CSV produced by compare")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  ConfigMap kv;
  if (!config_path.empty()) kv = read_config_file(config_path);
  if (seed_flag) {
    kv["synth.seed"] = std::to_string(*seed_flag);
    kv["ci.seed"] = std::to_string(*seed_flag);
  }
  if (jobs_flag) kv["jobs"] = std::to_string(*jobs_flag);
  if (!out_flag.empty()) kv["out.dir"] = out_flag;
  for (const std::string& ov : overrides) {
    const std::size_t eq = ov.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw std::invalid_argument("-D expects key=value, got '" + ov + "'");
    }
    kv[ov.substr(0, eq)] = ov.substr(eq + 1);
  }
  const RunConfig cfg = make_run_config(kv);

  if (synth->parsed()) return cmd_synth(cfg);
  if (churn->parsed()) return cmd_churn(cfg, churn_predictions, churn_task);
  if (compare->parsed()) return cmd_compare(cfg, dump_predictions);
  if (sweep->parsed()) return cmd_sweep_lambda(cfg);
  if (bo_lambda->parsed()) return cmd_bo_lambda(cfg);
  if (bo_loop->parsed()) return cmd_bo_loop(cfg);
  if (triage->parsed()) return cmd_triage(cfg, triage_predictions);
  if (nscale->parsed()) return cmd_nscale(cfg);
  if (overlap->parsed()) return cmd_overlap(cfg);
  if (footprint->parsed()) return cmd_footprint(cfg);
  if (report->parsed()) return cmd_report(cfg, report_rows);
  return 1;  // unreachable: require_subcommand(1)
}

}  // namespace churnkit
