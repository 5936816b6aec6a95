#pragma once
// Command-line front end: `optimize` runs one configured experiment and
// writes its artifacts, `sweep` reproduces a benchmark table, `gradcheck`
// compares adjoint gradients against finite differences.
//
// Exit codes: 0 success, 1 validation failure (bad config, bad flags, failed
// gradient check), 2 runtime failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rydopt/io.hpp"
#include "rydopt/rydopt.hpp"

namespace rydopt::cli {

namespace detail {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = ".";
  long seed = -1;      // <0 keeps the config value
  int epochs = 0;      // 0 keeps the config value
  int threads = 0;     // 0 means hardware_concurrency where it applies
};

inline ExperimentConfig load_config(const CommonArgs& args) {
  io::ConfigDoc doc = io::parse_ini_file(args.config_path);
  ExperimentConfig cfg = io::experiment_config_from_doc(doc);
  if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
  if (args.epochs > 0) cfg.epochs = args.epochs;
  return cfg;
}

inline std::string out_path(const CommonArgs& args, const std::string& name) {
  std::filesystem::create_directories(args.out_dir);
  return (std::filesystem::path(args.out_dir) / name).string();
}

}  // namespace detail

inline int cmd_optimize(const detail::CommonArgs& args) {
  const ExperimentConfig cfg = detail::load_config(args);
  io::RunManifest manifest;
  manifest.command = "optimize";
  manifest.config_hash = io::config_hash(io::to_doc(cfg));
  manifest.seed = cfg.seed;
  manifest.started_at_utc = io::utc_timestamp();

  ExperimentProblem ep = build_experiment(cfg);
  const std::string runlog_path = detail::out_path(args, "runlog.jsonl");
  std::ofstream runlog(runlog_path);
  rydopt::detail::require(runlog.good(), "cannot open output file '" + runlog_path + "'");

  OptimizeOptions opt;
  opt.epochs = cfg.epochs;
  opt.sched.eta_max = cfg.lr;
  opt.sched.eta_min = cfg.eta_min;
  opt.sched.t_max = cfg.t_max;
  OptimizeCallbacks cb;
  cb.on_epoch = [&runlog](const EpochRecord& rec) {
    runlog << io::epoch_record_to_json(rec).dump() << '\n';
    if (rec.epoch % 50 == 0)
      std::cout << "epoch " << rec.epoch << "  loss " << rec.loss << "  lr " << rec.lr
                << std::endl;
  };
  RunLog log = run_optimization(ep.problem, ep.params, opt, cb);
  runlog.close();

  const std::string best_path = detail::out_path(args, "best_params.json");
  io::write_best_params_json(best_path, log);

  ParameterSet best = apply_snapshot(ep.params, log.best_params());
  DiscretizedDrive drive = sample_sequence(ep.problem.seq, best);
  const std::string drive_path = detail::out_path(args, "drive.csv");
  io::write_drive_csv(drive_path, drive);

  manifest.finished_at_utc = io::utc_timestamp();
  manifest.outputs = {{"runlog", runlog_path},
                      {"best_params", best_path},
                      {"drive", drive_path}};
  io::write_manifest_json(detail::out_path(args, "manifest.json"), manifest);

  std::cout << "best_epoch " << log.records[log.best_index()].epoch << "  best_loss "
            << log.best_loss() << "  best_fidelity " << 1.0 - log.best_loss() << std::endl;
  return 0;
}

inline int cmd_sweep(const detail::CommonArgs& args, const std::string& table_name,
                     int n_seeds, int n_min, int n_max) {
  const Table table = table_from_string(table_name);
  SweepOptions opt;
  opt.n_seeds = n_seeds;
  opt.threads = args.threads;
  opt.epochs_override = args.epochs;
  opt.n_min = n_min;
  opt.n_max = n_max;
  opt.on_progress = [](const std::string& line) { std::cout << line << std::endl; };
  std::vector<SweepRow> rows = run_table_sweep(table, opt);
  io::write_sweep_csv(detail::out_path(args, "sweep.csv"), rows);

  bool any_failed = false;
  std::printf("%-34s %14s %14s\n", "label", "fidelity_pct", "reference_pct");
  for (const auto& row : rows) {
    if (row.failed) {
      any_failed = true;
      std::printf("%-34s FAILED: %s\n", row.label.c_str(), row.error.c_str());
    } else {
      std::printf("%-34s %14.4f %14.4f\n", row.label.c_str(), row.best_fidelity_pct,
                  row.reference_pct);
    }
  }
  return any_failed ? 2 : 0;
}

inline int cmd_gradcheck(const detail::CommonArgs& args) {
  const ExperimentConfig cfg = detail::load_config(args);
  rydopt::detail::require(cfg.n_qubits <= 4,
                          "gradcheck is limited to n_qubits <= 4; got " +
                              std::to_string(cfg.n_qubits));
  ExperimentProblem ep = build_experiment(cfg);
  ad::GradCheckReport report = ad::grad_check(model_for(ep.problem), ep.params);
  io::write_gradcheck_csv(detail::out_path(args, "gradcheck.csv"), report);
  int n_fail = 0;
  for (const auto& row : report.rows)
    if (!row.pass) ++n_fail;
  std::cout << "gradcheck: " << report.rows.size() << " components, " << n_fail
            << " failed, max_abs_err " << report.max_abs_err << std::endl;
  return report.all_pass ? 0 : 1;
}

inline int run(int argc, char** argv) {
  CLI::App app{"Differentiable pulse-sequence optimizer for neutral-atom arrays"};
  app.require_subcommand(1);

  detail::CommonArgs args;
  std::string table_name;
  int n_seeds = 3, n_min = 0, n_max = 0;

  auto add_common = [&args](CLI::App* sub, bool needs_config) {
    if (needs_config)
      sub->add_option("--config", args.config_path, "INI configuration file")
          ->required()
          ->envname("RYDOPT_CONFIG");
    sub->add_option("--out", args.out_dir, "output directory")->envname("RYDOPT_OUT");
    sub->add_option("--seed", args.seed, "override the RNG seed")->envname("RYDOPT_SEED");
    sub->add_option("--epochs", args.epochs, "override the epoch budget")
        ->envname("RYDOPT_EPOCHS");
    sub->add_option("--threads", args.threads, "worker threads for sweeps")
        ->envname("RYDOPT_THREADS");
  };

  CLI::App* optimize = app.add_subcommand("optimize", "run one configured experiment");
  add_common(optimize, true);

  CLI::App* sweep = app.add_subcommand("sweep", "reproduce a benchmark table");
  add_common(sweep, false);
  sweep->add_option("--table", table_name, "table name (t1..t5)")
      ->required()
      ->envname("RYDOPT_TABLE");
  sweep->add_option("--seeds", n_seeds, "restarts per stochastic row");
  sweep->add_option("--n-min", n_min, "skip rows below this qubit count");
  sweep->add_option("--n-max", n_max, "skip rows above this qubit count");

  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "compare adjoint gradients with finite differences");
  add_common(gradcheck, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (optimize->parsed()) return cmd_optimize(args);
    if (sweep->parsed()) return cmd_sweep(args, table_name, n_seeds, n_min, n_max);
    if (gradcheck->parsed()) return cmd_gradcheck(args);
  } catch (const std::invalid_argument& e) {
    std::cerr << "validation error: " << e.what() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
  return 0;
}

}  // namespace rydopt::cli
