#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "rydopt/dynamics.hpp"
#include "rydopt/optimize.hpp"
#include "rydopt/rydopt.hpp"

using namespace rydopt;
using Catch::Approx;

TEST_CASE("reverse sweep accumulates gradients through shared nodes", "[autograd]") {
  ad::Tape tape;
  Eigen::VectorXd x0(2);
  x0 << 1.5, -0.5;
  ad::Var x = tape.leaf(x0, true);
  ad::Var y = ad::add(tape, x, x);            // 2x
  ad::Var loss = ad::sum_squares(tape, y);    // 4(x0^2 + x1^2)
  REQUIRE(loss.scalar() == Approx(10.0));
  tape.backward(loss);
  REQUIRE(tape.grad_real(x.id)[0] == Approx(12.0));  // d/dx 4x^2 = 8x
  REQUIRE(tape.grad_real(x.id)[1] == Approx(-4.0));
}

TEST_CASE("backward is single-use and scalar-only", "[autograd]") {
  ad::Tape tape;
  ad::Var x = tape.leaf(Eigen::VectorXd::Ones(2), true);
  ad::Var s = ad::sum_squares(tape, x);
  tape.backward(s);
  REQUIRE_THROWS_AS(tape.backward(s), std::logic_error);

  ad::Tape tape2;
  ad::Var v = tape2.leaf(Eigen::VectorXd::Ones(2), true);
  REQUIRE_THROWS_AS(tape2.backward(v), std::logic_error);
}

TEST_CASE("elementary op values match hand calculations", "[autograd]") {
  ad::Tape t;
  Eigen::VectorXd v(3);
  v << 1.0, 2.0, 3.0;
  ad::Var x = t.leaf(v, true);
  REQUIRE(ad::scale(t, x, 2.0).real()[2] == Approx(6.0));
  REQUIRE(ad::sub_from(t, 1.0, ad::sum_squares(t, x)).scalar() == Approx(1.0 - 14.0));
  REQUIRE(ad::square_error(t, ad::sum_squares(t, x), 10.0).scalar() == Approx(16.0));
  REQUIRE(ad::broadcast(t, t.constant_scalar(7.0), 4).real().size() == 4);
  ad::Var r = ad::ramp_fill(t, t.constant_scalar(0.0), t.constant_scalar(4.0), 4);
  REQUIRE(r.real()[3] == Approx(3.0));  // endpoint excluded
  Eigen::VectorXd a(2), b(2);
  a << 1.0, 2.0;
  b << 3.0, 4.0;
  ad::Var m = ad::mul(t, t.leaf(a, true), t.leaf(b, true));
  REQUIRE(m.real()[1] == Approx(8.0));
  ad::Var cat = ad::concat(t, {t.constant(a), t.constant(b)});
  REQUIRE(cat.real().size() == 4);
  REQUIRE(cat.real()[2] == Approx(3.0));
}

namespace {

// FD check over a pure-tape model built from the op set.
ad::ModelFn tape_ops_model() {
  return [](ad::Tape& t, ad::LeafMap& leaves, const ParameterSet&) {
    ad::Var theta = leaves.get("theta");
    ad::Var amp = ad::sigmoid_bounded(t, theta, 3.0, 0.4);
    ad::Var det = ad::tanh_bounded(t, theta, 2.0, 0.7);
    Eigen::MatrixXd a(2, 3);
    a << 0.5, -1.0, 2.0, 1.5, 0.25, -0.75;
    ad::Var mixed = ad::matvec(t, a, ad::add(t, amp, det));
    ad::Var scalar = leaves.get("s");
    ad::Var scaled = ad::scale_by(t, scalar, mixed);
    ad::Var ramp = ad::ramp_fill(t, scalar, leaves.get("e"), 2);
    ad::Var tmpl = ad::scaled_template(t, Eigen::Vector2d(0.3, 0.7), leaves.get("e"));
    return ad::square_error(
        t, ad::sum_squares(t, ad::concat(t, {scaled, ramp, ad::mul(t, ramp, tmpl)})), 5.0);
  };
}

}  // namespace

TEST_CASE("composite tape models pass the finite-difference check", "[autograd]") {
  ParameterSet p;
  Eigen::VectorXd theta(3);
  theta << 0.2, -1.1, 2.5;
  p.set("theta", theta, true);
  p.set_scalar("s", 1.3, true);
  p.set_scalar("e", -0.6, true);
  ad::GradCheckReport rep = ad::grad_check(tape_ops_model(), p);
  CAPTURE(rep.max_abs_err);
  REQUIRE(rep.rows.size() == 5);
  REQUIRE(rep.all_pass);
}

TEST_CASE("gradients are linear in the loss scaling", "[autograd]") {
  ParameterSet p;
  p.set_scalar("s", 0.8, true);
  p.set_scalar("e", 0.3, true);
  Eigen::VectorXd theta(3);
  theta << 0.5, 0.5, 0.5;
  p.set("theta", theta, true);

  auto grads_for = [&](double factor) {
    ad::Tape t;
    ad::LeafMap leaves(t, p);
    ad::Var base = tape_ops_model()(t, leaves, p);
    ad::Var loss = ad::scale(t, base, factor);
    return ad::backward_gradients(t, loss, leaves);
  };
  auto g1 = grads_for(1.0);
  auto g3 = grads_for(3.0);
  for (const auto& [name, g] : g1)
    REQUIRE((3.0 * g - g3.at(name)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("untouched trainable parameters report zero gradients", "[autograd]") {
  ParameterSet p;
  p.set_scalar("used", 2.0, true);
  p.set_scalar("unused", 1.0, true);
  ad::Tape t;
  ad::LeafMap leaves(t, p);
  ad::Var loss = ad::sum_squares(t, leaves.get("used"));
  auto grads = ad::backward_gradients(t, loss, leaves);
  REQUIRE(grads.at("used")[0] == Approx(4.0));
  REQUIRE(grads.at("unused")[0] == 0.0);
}

TEST_CASE("frozen parameter sets yield an empty pass report", "[autograd]") {
  ParameterSet p;
  p.set_scalar("fixed", 2.0, false);
  ad::GradCheckReport rep = ad::grad_check(
      [](ad::Tape& t, ad::LeafMap& leaves, const ParameterSet&) {
        return ad::sum_squares(t, leaves.get("fixed"));
      },
      p);
  REQUIRE(rep.rows.empty());
  REQUIRE(rep.all_pass);
}

namespace {

Problem hadamard_problem(int n, int n_pulses, int tau_each) {
  Problem prob;
  prob.seq.reg = build_register(Layout::linear, 6.5, n);
  prob.seq.device = DeviceSpec{};
  for (int k = 0; k < n_pulses; ++k)
    prob.seq.pulses.push_back(Pulse::constant_pulse(
        tau_each, ParamRef{"amp_" + std::to_string(k)}, ParamRef{"det_" + std::to_string(k)},
        ParamRef{"phase_" + std::to_string(k)}));
  prob.loss.kind = LossKind::unitary_infidelity;
  prob.loss.target_unitary = hadamard_target(n);
  prob.loss.initial = CMat::Identity(Eigen::Index{1} << n, Eigen::Index{1} << n);
  return prob;
}

ParameterSet hadamard_params(int n_pulses, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-2.0, 4.0);
  ParameterSet p;
  for (int k = 0; k < n_pulses; ++k) {
    p.set_scalar("amp_" + std::to_string(k), std::abs(u(rng)), true);
    p.set_scalar("det_" + std::to_string(k), u(rng), true);
    p.set_scalar("phase_" + std::to_string(k), u(rng), true);
  }
  return p;
}

}  // namespace

TEST_CASE("propagation gradients match finite differences", "[autograd]") {
  Problem prob = hadamard_problem(2, 2, 90);
  ParameterSet p = hadamard_params(2, 5);
  ad::GradCheckReport rep = ad::grad_check(model_for(prob), p);
  CAPTURE(rep.max_abs_err);
  REQUIRE(rep.rows.size() == 6);
  REQUIRE(rep.all_pass);

  SolverOptions rk4;
  rk4.method = Solver::rk4_fixed;
  prob.solver = rk4;
  ad::GradCheckReport rep2 = ad::grad_check(model_for(prob), p);
  REQUIRE(rep2.all_pass);
}

TEST_CASE("atom coordinate gradients match finite differences", "[autograd]") {
  Problem prob;
  prob.seq.reg = Register{};
  prob.seq.reg.add("a0", 0.0, 0.0);
  prob.seq.reg.add("a1", 6.0, 2.0, true);
  prob.seq.reg.add("a2", 1.0, 6.5, true);
  prob.seq.device = DeviceSpec{};
  prob.seq.pulses.push_back(Pulse::constant_pulse(150, ParamRef{"omega"}, ParamRef{0.8},
                                                  ParamRef{0.1}));
  prob.loss.kind = LossKind::state_infidelity;
  CVec tgt = CVec::Zero(8);
  tgt[7] = 1.0;
  prob.loss.target_state = tgt;
  CVec init = CVec::Zero(8);
  init[0] = 1.0;
  prob.loss.initial = init;

  ParameterSet p;
  p.set_scalar("omega", 3.5, true);
  p.set("pos_a1", Eigen::Vector2d(6.0, 2.0), true);
  p.set("pos_a2", Eigen::Vector2d(1.0, 6.5), true);

  ad::GradCheckOptions opt;
  opt.step_for = [](const std::string& n) { return n.rfind("pos_", 0) == 0 ? 1e-3 : 1e-4; };
  ad::GradCheckReport rep = ad::grad_check(model_for(prob), p, opt);
  CAPTURE(rep.max_abs_err);
  REQUIRE(rep.rows.size() == 5);
  REQUIRE(rep.all_pass);
}

TEST_CASE("norm-squared of a propagated state has vanishing gradient", "[autograd]") {
  Problem prob = hadamard_problem(2, 1, 100);
  ParameterSet p = hadamard_params(1, 9);
  ad::Tape t;
  ad::LeafMap leaves(t, p);
  DriveVars drive = sample_sequence_ad(t, leaves, prob.seq);
  CVec init = CVec::Zero(4);
  init[0] = 1.0;
  ad::Var fin = ad::propagate_op(t, leaves, prob.seq.reg, prob.seq.device, drive, init, {});
  ad::Var loss = ad::norm_sq_op(t, fin);
  REQUIRE(loss.scalar() == Approx(1.0).margin(1e-9));
  auto grads = ad::backward_gradients(t, loss, leaves);
  for (const auto& [name, g] : grads) {
    CAPTURE(name);
    REQUIRE(g.cwiseAbs().maxCoeff() <= 1e-7);
  }
}

TEST_CASE("loss values are invariant to the initial state's global phase", "[autograd]") {
  Problem prob = hadamard_problem(2, 1, 120);
  ParameterSet p = hadamard_params(1, 13);
  CVec init = CVec::Zero(4);
  init[0] = 1.0;
  CVec tgt = CVec::Zero(4);
  tgt[3] = 1.0;

  auto loss_for = [&](const CVec& start) {
    ad::Tape t;
    ad::LeafMap leaves(t, p);
    DriveVars drive = sample_sequence_ad(t, leaves, prob.seq);
    ad::Var fin = ad::propagate_op(t, leaves, prob.seq.reg, prob.seq.device, drive, start, {});
    return ad::state_fidelity_op(t, fin, tgt).scalar();
  };
  REQUIRE(loss_for(init) == Approx(loss_for(std::polar(1.0, 2.1) * init)).margin(1e-12));
}

TEST_CASE("expectation losses differentiate through the observable", "[autograd]") {
  Problem prob;
  prob.seq.reg = Register{};
  prob.seq.reg.add("a0", 0.0, 0.0);
  prob.seq.device = DeviceSpec{};
  prob.seq.pulses.push_back(Pulse::constant_pulse(200, ParamRef{"omega"}, ParamRef{0.0},
                                                  ParamRef{0.0}));
  prob.loss.kind = LossKind::expectation_mse;
  CMat sz(2, 2);
  sz << -1.0, 0.0, 0.0, 1.0;
  prob.loss.observable = sz;
  prob.loss.target_value = -1.0;
  CVec init(2);
  init << 1.0, 0.0;
  prob.loss.initial = init;

  ParameterSet p;
  p.set_scalar("omega", 2.0, true);
  ad::GradCheckReport rep = ad::grad_check(model_for(prob), p);
  REQUIRE(rep.all_pass);

  // <sigma_z> of the untouched ground state is -1, so the loss starts at 0.
  ParameterSet dark;
  dark.set_scalar("omega", 0.0, true);
  REQUIRE(ad::evaluate_model(model_for(prob), dark) == Approx(0.0).margin(1e-12));
}

TEST_CASE("gradient check rows carry the comparison data", "[autograd]") {
  ParameterSet p;
  p.set_scalar("s", 1.0, true);
  ad::GradCheckReport rep = ad::grad_check(
      [](ad::Tape& t, ad::LeafMap& leaves, const ParameterSet&) {
        return ad::sum_squares(t, leaves.get("s"));
      },
      p);
  REQUIRE(rep.rows.size() == 1);
  REQUIRE(rep.rows[0].param == "s");
  REQUIRE(rep.rows[0].component == 0);
  REQUIRE(rep.rows[0].analytic == Approx(2.0));
  REQUIRE(rep.rows[0].numeric == Approx(2.0).epsilon(1e-7));
  REQUIRE(rep.rows[0].pass);
}
