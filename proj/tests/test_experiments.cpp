#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "rydopt/rydopt.hpp"

using namespace rydopt;
using Catch::Approx;

TEST_CASE("experiment kinds round-trip through strings", "[experiments]") {
  for (auto k : {ExperimentKind::gate_const, ExperimentKind::gate_custom,
                 ExperimentKind::state_prep})
    REQUIRE(experiment_kind_from_string(experiment_kind_to_string(k)) == k);
  REQUIRE_THROWS_WITH(experiment_kind_from_string("warp_drive"),
                      Catch::Matchers::ContainsSubstring("warp_drive"));
}

TEST_CASE("default configurations pin the benchmark setups", "[experiments]") {
  ExperimentConfig gc = default_config(ExperimentKind::gate_const, 3);
  REQUIRE(gc.n_qubits == 3);
  REQUIRE(gc.spacing_um == 6.5);
  REQUIRE(gc.n_pulses == 8);
  REQUIRE(gc.pulse_duration_ns == 131.0);
  REQUIRE(gc.omega_max == Approx(4.0 * kPi));
  REQUIRE(gc.abs_detuning_max == Approx(4.0 * kPi));
  REQUIRE(gc.lr == 5.0);
  REQUIRE(gc.t_max == 50);
  REQUIRE(gc.epochs == 1000);
  REQUIRE(gc.eta_min == 0.5);

  ExperimentConfig cu = default_config(ExperimentKind::gate_custom, 4);
  REQUIRE(cu.spacing_um == 6.5);
  REQUIRE(cu.duration_ns == 1100.0);
  REQUIRE(cu.n_controls == 20);
  REQUIRE(cu.gamma == 0.05);
  REQUIRE(cu.eta_min == 0.5);

  ExperimentConfig sp = default_config(ExperimentKind::state_prep, 4);
  REQUIRE(sp.spacing_um == 7.0);
  REQUIRE(sp.n_controls == 30);
  REQUIRE(sp.abs_detuning_max == Approx(2.0 * kPi));
  REQUIRE(sp.omega_max == Approx(4.0 * kPi));
  REQUIRE(sp.eta_min == 0.5);
}

TEST_CASE("basis strings address qubit j with character j", "[experiments]") {
  REQUIRE(parse_basis_state("10", 2)[1] == 1.0);   // qubit 0 set -> index 1
  REQUIRE(parse_basis_state("01", 2)[2] == 1.0);   // qubit 1 set -> index 2
  REQUIRE(parse_basis_state("111", 3)[7] == 1.0);
  REQUIRE(parse_basis_state("000", 3)[0] == 1.0);
  REQUIRE(parse_basis_state("10", 2).norm() == 1.0);
  REQUIRE_THROWS_WITH(parse_basis_state("1", 2),
                      Catch::Matchers::ContainsSubstring("per qubit"));
  REQUIRE_THROWS_WITH(parse_basis_state("1x", 2),
                      Catch::Matchers::ContainsSubstring("'0' and '1'"));
}

TEST_CASE("total Rydberg population operator counts set bits", "[experiments]") {
  CMat obs = total_rydberg_observable(2);
  REQUIRE(obs(0, 0).real() == 0.0);
  REQUIRE(obs(1, 1).real() == 1.0);
  REQUIRE(obs(2, 2).real() == 1.0);
  REQUIRE(obs(3, 3).real() == 2.0);
  REQUIRE(obs.cwiseAbs().sum() == Approx(4.0));  // diagonal only
}

TEST_CASE("piecewise-constant gate problems expose one scalar triple per pulse",
          "[experiments]") {
  ExperimentConfig cfg = default_config(ExperimentKind::gate_const, 2);
  ExperimentProblem ep = build_gate_const_experiment(cfg);

  REQUIRE(ep.params.names().size() == 24);  // 8 pulses x (amp, det, phase)
  int boxed = 0;
  for (const auto& name : ep.params.names()) {
    const Param& p = ep.params.at(name);
    REQUIRE(p.trainable);
    REQUIRE(p.value.size() == 1);
    REQUIRE(p.value[0] == 5.0);
    if (p.box) ++boxed;
  }
  REQUIRE(boxed == 16);  // amplitudes and detunings; phases are free
  REQUIRE(ep.params.at("amp_0").box->at(0) == 0.0);
  REQUIRE(ep.params.at("amp_0").box->at(1) == Approx(4.0 * kPi));
  REQUIRE(ep.params.at("det_0").box->at(0) == Approx(-4.0 * kPi));

  REQUIRE(ep.problem.seq.pulses.size() == 8);
  REQUIRE(ep.problem.seq.total_duration_ns() == 1048);
  REQUIRE(ep.problem.loss.kind == LossKind::unitary_infidelity);
  REQUIRE(ep.problem.loss.target_unitary.rows() == 4);
  REQUIRE(ep.problem.loss.initial.isApprox(CMat::Identity(4, 4)));
}

TEST_CASE("an undriven gate attempt scores zero overlap with the Hadamard target",
          "[experiments]") {
  // Tr(H_target) = 0 for the Hadamard word, so the undriven propagator (the
  // identity) has exactly zero trace overlap and the loss is exactly 1.
  ExperimentConfig cfg = default_config(ExperimentKind::gate_const, 1);
  cfg.n_pulses = 1;
  ExperimentProblem ep = build_gate_const_experiment(cfg);
  ep.params.set_scalar("amp_0", 0.0, true, {{0.0, cfg.omega_max}});
  ep.params.set_scalar("det_0", 0.0, true);
  ep.params.set_scalar("phase_0", 0.0, true);
  const double loss = ad::evaluate_model(model_for(ep.problem), ep.params);
  REQUIRE(loss == Approx(1.0).margin(1e-12));
  REQUIRE(hadamard_target(1).trace() == std::complex<double>(0.0, 0.0));
}

TEST_CASE("gate losses are invariant under 2 pi phase shifts", "[experiments]") {
  ExperimentConfig cfg = default_config(ExperimentKind::gate_const, 2);
  ExperimentProblem ep = build_gate_const_experiment(cfg);
  const double base = ad::evaluate_model(model_for(ep.problem), ep.params);
  ParameterSet shifted = ep.params;
  for (int k = 0; k < cfg.n_pulses; ++k) {
    Param& ph = shifted.at("phase_" + std::to_string(k));
    ph.value[0] += 2.0 * kPi;
  }
  const double moved = ad::evaluate_model(model_for(ep.problem), shifted);
  REQUIRE(moved == Approx(base).margin(1e-10));
}

TEST_CASE("interpolated-drive problems draw amplitude controls before detuning",
          "[experiments]") {
  ExperimentConfig cfg = default_config(ExperimentKind::gate_custom, 2);
  cfg.seed = 42;
  ExperimentProblem ep = build_gate_custom_experiment(cfg);
  const Eigen::VectorXd& amp = ep.params.at("amp_custom").value;
  const Eigen::VectorXd& det = ep.params.at("det_custom").value;
  REQUIRE(amp.size() == 20);
  REQUIRE(det.size() == 20);

  std::mt19937_64 rng(42);
  auto draw = [&rng]() { return 5.0 * (static_cast<double>(rng() >> 11) * 0x1.0p-53) - 2.5; };
  for (int i = 0; i < 20; ++i) REQUIRE(amp[i] == draw());
  for (int i = 0; i < 20; ++i) REQUIRE(det[i] == draw());
  REQUIRE((amp.array().abs() <= 2.5).all());

  // Same seed reproduces the draw; another seed changes it.
  ExperimentProblem again = build_gate_custom_experiment(cfg);
  REQUIRE(again.params.at("amp_custom").value.isApprox(amp));
  cfg.seed = 43;
  ExperimentProblem other = build_gate_custom_experiment(cfg);
  REQUIRE(!other.params.at("amp_custom").value.isApprox(amp));
}

TEST_CASE("zeroed controls give a zero-edged half-amplitude drive", "[experiments]") {
  // Controls are transformed before interpolation, so theta = 0 pins every
  // knot at omega_max/2 while the interpolation still ramps the edges to 0.
  ExperimentConfig cfg = default_config(ExperimentKind::gate_custom, 2);
  ExperimentProblem ep = build_gate_custom_experiment(cfg);
  ep.params.set("amp_custom", Eigen::VectorXd::Zero(cfg.n_controls), true);
  ep.params.set("det_custom", Eigen::VectorXd::Zero(cfg.n_controls), true);
  DiscretizedDrive s = sample_sequence(ep.problem.seq, ep.params);
  REQUIRE(static_cast<int>(s.amp.size()) == 1100);
  REQUIRE(s.amp[0] == 0.0);
  REQUIRE(s.amp[550] == Approx(cfg.omega_max / 2.0).margin(1e-12));
  REQUIRE(s.amp[1099] < cfg.omega_max / 4.0);
  REQUIRE(s.amp.maxCoeff() <= cfg.omega_max / 2.0 + 1e-12);
  REQUIRE(s.amp.minCoeff() >= 0.0);
  REQUIRE(s.det.cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(s.phase.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("state preparation wires the basis target and the ground start",
          "[experiments]") {
  ExperimentConfig cfg = default_config(ExperimentKind::state_prep, 3);
  ExperimentProblem ep = build_state_prep_experiment(cfg);
  REQUIRE(ep.problem.loss.kind == LossKind::state_infidelity);
  REQUIRE(ep.problem.loss.target_state[7] == 1.0);  // default target: all ones
  REQUIRE(ep.problem.loss.initial(0, 0) == 1.0);
  REQUIRE(ep.problem.loss.initial.col(0).tail(7).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(ep.problem.seq.reg.atoms()[1].x == Approx(7.0));

  cfg.target_basis = "010";
  ExperimentProblem custom = build_state_prep_experiment(cfg);
  REQUIRE(custom.problem.loss.target_state[2] == 1.0);
}

TEST_CASE("benchmark tables enumerate the published rows", "[experiments]") {
  REQUIRE(sweep_rows(Table::t1).size() == 6);
  REQUIRE(sweep_rows(Table::t2).size() == 6);
  REQUIRE(sweep_rows(Table::t3).size() == 6);
  REQUIRE(sweep_rows(Table::t4).size() == 12);
  REQUIRE(sweep_rows(Table::t5).size() == 4);

  auto t1 = sweep_rows(Table::t1);
  REQUIRE(t1[0].label == "gate_const_n2");
  REQUIRE(t1[0].reference_pct == 99.54);
  REQUIRE(t1[5].cfg.n_qubits == 7);
  REQUIRE(t1[5].reference_pct == 95.25);

  auto t2 = sweep_rows(Table::t2);
  REQUIRE(t2[2].label == "gate_custom_n4");
  REQUIRE(t2[2].reference_pct == 99.85);

  auto t4 = sweep_rows(Table::t4);
  REQUIRE(t4[0].label == "gate_custom_n2_tau1000");
  REQUIRE(t4[0].cfg.duration_ns == 1000.0);
  REQUIRE(t4[6].label == "gate_custom_n2_tau1200");
  REQUIRE(t4[6].cfg.duration_ns == 1200.0);
  REQUIRE(t4[11].reference_pct == 99.76);

  auto t5 = sweep_rows(Table::t5);
  REQUIRE(t5[0].label == "state_prep_n6_linear_7.0um");
  REQUIRE(t5[0].reference_pct == 99.85);
  REQUIRE(t5[2].label == "state_prep_n6_rect2x3_6.5um");
  REQUIRE(t5[2].cfg.spacing_um == 6.5);
  REQUIRE(t5[2].cfg.rows == 2);
  REQUIRE(t5[2].cfg.cols == 3);
  REQUIRE(t5[2].reference_pct == 88.69);
  REQUIRE(t5[3].label == "state_prep_n6_triangle_7.0um");

  REQUIRE(table_from_string("T4") == Table::t4);
  REQUIRE(table_to_string(Table::t5) == "t5");
  REQUIRE_THROWS_WITH(table_from_string("t9"),
                      Catch::Matchers::ContainsSubstring("t9"));
}

TEST_CASE("short optimization runs already lift the state fidelity", "[experiments]") {
  ExperimentConfig cfg = default_config(ExperimentKind::state_prep, 2);
  cfg.epochs = 150;
  ExperimentResult res = run_experiment(cfg);
  REQUIRE(res.best_fidelity > 0.99);
  REQUIRE(static_cast<int>(res.log.records.size()) <= cfg.epochs);
  REQUIRE(res.best_fidelity == Approx(1.0 - res.log.best_loss()));
  REQUIRE(res.best_params.count("amp_custom") == 1);
}

TEST_CASE("table sweeps filter rows, override budgets, and collect seeds",
          "[experiments]") {
  SweepOptions opt;
  opt.n_seeds = 2;
  opt.threads = 1;
  opt.epochs_override = 2;
  opt.n_max = 2;
  std::vector<std::string> progress;
  opt.on_progress = [&](const std::string& line) { progress.push_back(line); };

  auto rows = run_table_sweep(Table::t3, opt);
  REQUIRE(rows.size() == 1);
  REQUIRE(rows[0].label == "state_prep_n2");
  REQUIRE(rows[0].cfg.epochs == 2);
  REQUIRE(!rows[0].failed);
  REQUIRE(rows[0].seed_fidelities_pct.size() == 2);
  REQUIRE(rows[0].best_fidelity_pct ==
          Approx(std::max(rows[0].seed_fidelities_pct[0], rows[0].seed_fidelities_pct[1])));
  REQUIRE(progress.size() == 2);

  // Deterministic rows run a single seed regardless of the request.
  auto t1 = run_table_sweep(Table::t1, opt);
  REQUIRE(t1.size() == 1);
  REQUIRE(t1[0].seed_fidelities_pct.size() == 1);
}
