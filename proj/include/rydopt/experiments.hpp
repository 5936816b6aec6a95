#pragma once
// Preconfigured optimization problems: piecewise-constant gate synthesis,
// interpolated-waveform gate synthesis, and state preparation, plus the
// benchmark tables and a threaded sweep driver.

#include <atomic>
#include <bit>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "rydopt/core.hpp"
#include "rydopt/dynamics.hpp"
#include "rydopt/optimize.hpp"
#include "rydopt/waveforms.hpp"

namespace rydopt {

enum class ExperimentKind { gate_const, gate_custom, state_prep };

inline std::string experiment_kind_to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::gate_const: return "gate_const";
    case ExperimentKind::gate_custom: return "gate_custom";
    case ExperimentKind::state_prep: return "state_prep";
  }
  detail::fail("unknown experiment kind");
}

inline ExperimentKind experiment_kind_from_string(const std::string& s) {
  if (s == "gate_const") return ExperimentKind::gate_const;
  if (s == "gate_custom") return ExperimentKind::gate_custom;
  if (s == "state_prep") return ExperimentKind::state_prep;
  detail::fail("unknown experiment kind '" + s + "'");
}

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::gate_const;
  int n_qubits = 2;
  Layout layout = Layout::linear;
  double spacing_um = 6.5;
  int rows = 0, cols = 0;  // rectangular layouts

  // gate_const: n_pulses constant pulses of pulse_duration_ns each.
  int n_pulses = 8;
  double pulse_duration_ns = 131.0;

  // gate_custom / state_prep: one pulse of duration_ns with n_controls
  // interpolation controls per waveform.
  double duration_ns = 1100.0;
  int n_controls = 20;
  double gamma = 0.05;

  double omega_max = 4.0 * kPi;
  double abs_detuning_max = 4.0 * kPi;

  std::string target_basis;  // state_prep; empty means all ones
  std::uint64_t seed = 1;

  int epochs = 1000;
  double lr = 5.0;
  double eta_min = 0.0;
  int t_max = 50;
  SolverOptions solver;
};

inline ExperimentConfig default_config(ExperimentKind kind, int n_qubits) {
  ExperimentConfig cfg;
  cfg.kind = kind;
  cfg.n_qubits = n_qubits;
  // The saturating cosine schedule parks the learning rate at eta_min once
  // the loss is below the restart floor; a nonzero floor keeps the search
  // moving through the long sub-1% tail of these landscapes.
  cfg.eta_min = 0.5;
  switch (kind) {
    case ExperimentKind::gate_const:
      cfg.spacing_um = 6.5;
      break;
    case ExperimentKind::gate_custom:
      cfg.spacing_um = 6.5;
      cfg.n_controls = 20;
      break;
    case ExperimentKind::state_prep:
      cfg.spacing_um = 7.0;
      cfg.n_controls = 30;
      cfg.abs_detuning_max = 2.0 * kPi;
      break;
  }
  return cfg;
}

// Basis-state column for a bitstring; character j addresses qubit j.
inline CVec parse_basis_state(const std::string& bits, int n_qubits) {
  detail::require(static_cast<int>(bits.size()) == n_qubits,
                  "basis string must have one character per qubit");
  std::size_t index = 0;
  for (int j = 0; j < n_qubits; ++j) {
    if (bits[j] == '1')
      index |= std::size_t{1} << j;
    else
      detail::require(bits[j] == '0', "basis string may contain only '0' and '1'");
  }
  CVec v = CVec::Zero(Eigen::Index{1} << n_qubits);
  v[static_cast<Eigen::Index>(index)] = 1.0;
  return v;
}

// diag(popcount): total Rydberg population operator.
inline CMat total_rydberg_observable(int n_qubits) {
  const Eigen::Index dim = Eigen::Index{1} << n_qubits;
  CMat obs = CMat::Zero(dim, dim);
  for (Eigen::Index b = 0; b < dim; ++b)
    obs(b, b) = static_cast<double>(std::popcount(static_cast<unsigned long long>(b)));
  return obs;
}

struct ExperimentProblem {
  Problem problem;
  ParameterSet params;
};

namespace detail {

// Uniform doubles in [0, 1) with the 53-bit ldexp construction; the amplitude
// controls are always drawn before the detuning controls.
inline Eigen::VectorXd uniform_controls(std::mt19937_64& rng, int n, double scale,
                                        double shift) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    v[i] = scale * u + shift;
  }
  return v;
}

inline DeviceSpec device_for(const ExperimentConfig& cfg) {
  DeviceSpec dev;
  dev.max_amp = cfg.omega_max;
  dev.max_abs_detuning = cfg.abs_detuning_max;
  return dev;
}

}  // namespace detail

inline ExperimentProblem build_gate_const_experiment(const ExperimentConfig& cfg) {
  detail::require(cfg.n_pulses >= 1, "gate_const needs at least one pulse");
  ExperimentProblem ep;
  Register reg = build_register(cfg.layout, cfg.spacing_um, cfg.n_qubits, cfg.rows, cfg.cols);
  DeviceSpec dev = detail::device_for(cfg);
  Sequence seq;
  seq.reg = reg;
  seq.device = dev;
  for (int k = 0; k < cfg.n_pulses; ++k) {
    const std::string amp = "amp_" + std::to_string(k);
    const std::string det = "det_" + std::to_string(k);
    const std::string phase = "phase_" + std::to_string(k);
    ep.params.set_scalar(amp, 5.0, true, {{0.0, cfg.omega_max}});
    ep.params.set_scalar(det, 5.0, true, {{-cfg.abs_detuning_max, cfg.abs_detuning_max}});
    ep.params.set_scalar(phase, 5.0, true);
    seq.pulses.push_back(Pulse::constant_pulse(static_cast<int>(cfg.pulse_duration_ns),
                                               ParamRef{amp}, ParamRef{det},
                                               ParamRef{phase}));
  }
  seq.validate(ep.params);
  ep.problem.seq = std::move(seq);
  ep.problem.loss.kind = LossKind::unitary_infidelity;
  ep.problem.loss.target_unitary = hadamard_target(cfg.n_qubits);
  ep.problem.loss.initial = CMat::Identity(Eigen::Index{1} << cfg.n_qubits,
                                           Eigen::Index{1} << cfg.n_qubits);
  ep.problem.solver = cfg.solver;
  return ep;
}

namespace detail {

// Shared shape of the interpolated-waveform experiments: one pulse, custom
// amplitude and detuning with bounded transforms, phase fixed at zero.
inline ExperimentProblem build_custom_drive(const ExperimentConfig& cfg) {
  detail::require(cfg.n_controls >= 1, "need at least one control");
  detail::require(cfg.duration_ns >= cfg.n_controls + 1,
                  "duration must be at least n_controls + 1 ns");
  ExperimentProblem ep;
  Register reg = build_register(cfg.layout, cfg.spacing_um, cfg.n_qubits, cfg.rows, cfg.cols);
  DeviceSpec dev = device_for(cfg);

  std::mt19937_64 rng(cfg.seed);
  ep.params.set("amp_custom", uniform_controls(rng, cfg.n_controls, 5.0, -2.5), true);
  ep.params.set("det_custom", uniform_controls(rng, cfg.n_controls, 5.0, -2.5), true);

  const int tau = static_cast<int>(cfg.duration_ns);
  WaveformSpec amp = WaveformSpec::custom_wf(tau, "amp_custom", cfg.n_controls,
                                             Transform::amplitude_sigmoid, cfg.omega_max,
                                             cfg.gamma);
  WaveformSpec det = WaveformSpec::custom_wf(tau, "det_custom", cfg.n_controls,
                                             Transform::detuning_tanh, cfg.abs_detuning_max,
                                             cfg.gamma);
  Sequence seq;
  seq.reg = reg;
  seq.device = dev;
  seq.pulses.emplace_back(amp, det, ParamRef{0.0});
  seq.validate(ep.params);
  ep.problem.seq = std::move(seq);
  ep.problem.solver = cfg.solver;
  return ep;
}

}  // namespace detail

inline ExperimentProblem build_gate_custom_experiment(const ExperimentConfig& cfg) {
  ExperimentProblem ep = detail::build_custom_drive(cfg);
  ep.problem.loss.kind = LossKind::unitary_infidelity;
  ep.problem.loss.target_unitary = hadamard_target(cfg.n_qubits);
  ep.problem.loss.initial = CMat::Identity(Eigen::Index{1} << cfg.n_qubits,
                                           Eigen::Index{1} << cfg.n_qubits);
  return ep;
}

inline ExperimentProblem build_state_prep_experiment(const ExperimentConfig& cfg) {
  ExperimentProblem ep = detail::build_custom_drive(cfg);
  ep.problem.loss.kind = LossKind::state_infidelity;
  const std::string bits =
      cfg.target_basis.empty() ? std::string(cfg.n_qubits, '1') : cfg.target_basis;
  ep.problem.loss.target_state = parse_basis_state(bits, cfg.n_qubits);
  CVec initial = CVec::Zero(Eigen::Index{1} << cfg.n_qubits);
  initial[0] = 1.0;
  ep.problem.loss.initial = initial;
  return ep;
}

inline ExperimentProblem build_experiment(const ExperimentConfig& cfg) {
  switch (cfg.kind) {
    case ExperimentKind::gate_const: return build_gate_const_experiment(cfg);
    case ExperimentKind::gate_custom: return build_gate_custom_experiment(cfg);
    case ExperimentKind::state_prep: return build_state_prep_experiment(cfg);
  }
  detail::fail("unknown experiment kind");
}

struct ExperimentResult {
  ExperimentConfig cfg;
  RunLog log;
  double best_fidelity = 0.0;  // 1 - best loss
  ParamSnapshot best_params;
};

inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       const OptimizeCallbacks& cb = {}) {
  ExperimentProblem ep = build_experiment(cfg);
  OptimizeOptions opt;
  opt.epochs = cfg.epochs;
  opt.adam = AdamOptions{};
  opt.sched.eta_max = cfg.lr;
  opt.sched.eta_min = cfg.eta_min;
  opt.sched.t_max = cfg.t_max;
  ExperimentResult res;
  res.cfg = cfg;
  res.log = run_optimization(ep.problem, ep.params, opt, cb);
  res.best_fidelity = 1.0 - res.log.best_loss();
  res.best_params = res.log.best_params();
  return res;
}

// ---------------------------------------------------------------------------
// Benchmark tables. Reference fidelities (percent) are the published values
// the sweep CSV reports alongside our results.

enum class Table { t1, t2, t3, t4, t5 };

inline Table table_from_string(const std::string& s) {
  if (s == "t1" || s == "T1") return Table::t1;
  if (s == "t2" || s == "T2") return Table::t2;
  if (s == "t3" || s == "T3") return Table::t3;
  if (s == "t4" || s == "T4") return Table::t4;
  if (s == "t5" || s == "T5") return Table::t5;
  detail::fail("unknown table '" + s + "'");
}

inline std::string table_to_string(Table t) {
  switch (t) {
    case Table::t1: return "t1";
    case Table::t2: return "t2";
    case Table::t3: return "t3";
    case Table::t4: return "t4";
    case Table::t5: return "t5";
  }
  detail::fail("unknown table");
}

struct SweepRowSpec {
  std::string label;
  ExperimentConfig cfg;
  double reference_pct = 0.0;
};

inline std::vector<SweepRowSpec> sweep_rows(Table table) {
  std::vector<SweepRowSpec> rows;
  auto add = [&rows](std::string label, ExperimentConfig cfg, double ref) {
    rows.push_back(SweepRowSpec{std::move(label), std::move(cfg), ref});
  };
  switch (table) {
    case Table::t1: {
      const double ref[] = {99.54, 98.09, 97.31, 94.08, 93.11, 95.25};
      for (int n = 2; n <= 7; ++n) {
        auto cfg = default_config(ExperimentKind::gate_const, n);
        add("gate_const_n" + std::to_string(n), cfg, ref[n - 2]);
      }
      break;
    }
    case Table::t2: {
      const double ref[] = {99.99, 99.84, 99.85, 99.73, 99.61, 99.51};
      for (int n = 2; n <= 7; ++n) {
        auto cfg = default_config(ExperimentKind::gate_custom, n);
        add("gate_custom_n" + std::to_string(n), cfg, ref[n - 2]);
      }
      break;
    }
    case Table::t3: {
      const double ref[] = {99.99, 98.87, 96.09, 93.55, 99.85, 99.76};
      for (int n = 2; n <= 7; ++n) {
        auto cfg = default_config(ExperimentKind::state_prep, n);
        add("state_prep_n" + std::to_string(n), cfg, ref[n - 2]);
      }
      break;
    }
    case Table::t4: {
      const double ref1000[] = {99.99, 98.06, 95.21, 91.19, 88.39, 85.36};
      const double ref1200[] = {99.99, 99.35, 96.28, 99.86, 99.83, 99.76};
      for (int n = 2; n <= 7; ++n) {
        auto cfg = default_config(ExperimentKind::gate_custom, n);
        cfg.duration_ns = 1000.0;
        add("gate_custom_n" + std::to_string(n) + "_tau1000", cfg, ref1000[n - 2]);
      }
      for (int n = 2; n <= 7; ++n) {
        auto cfg = default_config(ExperimentKind::gate_custom, n);
        cfg.duration_ns = 1200.0;
        add("gate_custom_n" + std::to_string(n) + "_tau1200", cfg, ref1200[n - 2]);
      }
      break;
    }
    case Table::t5: {
      auto linear7 = default_config(ExperimentKind::state_prep, 6);
      add("state_prep_n6_linear_7.0um", linear7, 99.85);

      auto rect7 = default_config(ExperimentKind::state_prep, 6);
      rect7.layout = Layout::rectangular;
      rect7.rows = 2;
      rect7.cols = 3;
      add("state_prep_n6_rect2x3_7.0um", rect7, 97.75);

      auto rect65 = rect7;
      rect65.spacing_um = 6.5;
      add("state_prep_n6_rect2x3_6.5um", rect65, 88.69);

      auto tri7 = default_config(ExperimentKind::state_prep, 6);
      tri7.layout = Layout::triangular;
      add("state_prep_n6_triangle_7.0um", tri7, 95.73);
      break;
    }
  }
  return rows;
}

struct SweepOptions {
  int n_seeds = 3;
  int threads = 0;          // 0 means hardware_concurrency
  int epochs_override = 0;  // 0 keeps the per-row epoch budget
  int n_min = 0, n_max = 0; // 0 disables qubit-count filtering
  std::function<void(const std::string&)> on_progress;
};

struct SweepRow {
  std::string label;
  ExperimentConfig cfg;
  double reference_pct = 0.0;
  double best_fidelity_pct = 0.0;         // best over seeds
  std::vector<double> seed_fidelities_pct;
  bool failed = false;
  std::string error;
};

// Runs every (row, seed) job on a fixed-size thread pool. Deterministic rows
// (gate_const draws nothing) run once regardless of n_seeds.
inline std::vector<SweepRow> run_table_sweep(Table table, const SweepOptions& opt = {}) {
  detail::require(opt.n_seeds >= 1, "n_seeds must be >= 1");
  std::vector<SweepRowSpec> specs = sweep_rows(table);
  std::vector<SweepRow> rows;
  for (auto& spec : specs) {
    if (opt.n_min > 0 && spec.cfg.n_qubits < opt.n_min) continue;
    if (opt.n_max > 0 && spec.cfg.n_qubits > opt.n_max) continue;
    SweepRow row;
    row.label = spec.label;
    row.cfg = spec.cfg;
    if (opt.epochs_override > 0) row.cfg.epochs = opt.epochs_override;
    row.reference_pct = spec.reference_pct;
    const int seeds = row.cfg.kind == ExperimentKind::gate_const ? 1 : opt.n_seeds;
    row.seed_fidelities_pct.assign(seeds, 0.0);
    rows.push_back(std::move(row));
  }

  struct Job {
    int row = 0;
    int seed_index = 0;
  };
  std::vector<Job> jobs;
  for (int r = 0; r < static_cast<int>(rows.size()); ++r)
    for (int s = 0; s < static_cast<int>(rows[r].seed_fidelities_pct.size()); ++s)
      jobs.push_back(Job{r, s});

  std::mutex mu;
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      const Job job = jobs[i];
      ExperimentConfig cfg = rows[job.row].cfg;
      cfg.seed = static_cast<std::uint64_t>(job.seed_index + 1);
      try {
        ExperimentResult res = run_experiment(cfg);
        std::lock_guard<std::mutex> lock(mu);
        rows[job.row].seed_fidelities_pct[job.seed_index] = 100.0 * res.best_fidelity;
        if (opt.on_progress)
          opt.on_progress(rows[job.row].label + " seed " + std::to_string(cfg.seed) +
                          ": " + std::to_string(100.0 * res.best_fidelity) + "%");
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(mu);
        rows[job.row].failed = true;
        rows[job.row].error = e.what();
      }
    }
  };

  unsigned n_threads = opt.threads > 0 ? static_cast<unsigned>(opt.threads)
                                       : std::thread::hardware_concurrency();
  if (n_threads == 0) n_threads = 1;
  n_threads = std::min<unsigned>(n_threads, jobs.empty() ? 1 : jobs.size());
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  for (auto& row : rows) {
    for (double f : row.seed_fidelities_pct)
      row.best_fidelity_pct = std::max(row.best_fidelity_pct, f);
  }
  return rows;
}

}  // namespace rydopt
