#pragma once
// Gradient-descent machinery: Adam, cosine-annealed learning rate with
// plateau restart, per-epoch logging with best-parameter extraction, loss
// assembly, and the smooth duration reparameterization for trainable pulse
// lengths.

#include <cmath>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rydopt/autograd.hpp"
#include "rydopt/core.hpp"
#include "rydopt/dynamics.hpp"
#include "rydopt/waveforms.hpp"

namespace rydopt::ad {

// Elementwise product.
inline Var mul(Tape& t, Var a, Var b) {
  detail::require(a.real().size() == b.real().size(), "mul: size mismatch");
  RealVec v = a.real().cwiseProduct(b.real());
  const int ai = a.id, bi = b.id;
  return t.push(Value{std::move(v)}, {ai, bi}, [ai, bi](Tape& tp, int self) {
    const RealVec& g = tp.grad_real(self);
    if (tp.needs(ai)) tp.grad_real(ai) += g.cwiseProduct(tp.real(bi));
    if (tp.needs(bi)) tp.grad_real(bi) += g.cwiseProduct(tp.real(ai));
  });
}

// Scalar times vector.
inline Var scale_by(Tape& t, Var s, Var x) {
  const double sv = s.scalar();
  RealVec v = sv * x.real();
  const int si = s.id, xi = x.id;
  return t.push(Value{std::move(v)}, {si, xi}, [si, xi](Tape& tp, int self) {
    const RealVec& g = tp.grad_real(self);
    if (tp.needs(si)) tp.grad_real(si)[0] += g.dot(tp.real(xi));
    if (tp.needs(xi)) tp.grad_real(xi) += tp.real(si)[0] * g;
  });
}

}  // namespace rydopt::ad

namespace rydopt {

inline double mse_loss(double value, double target) {
  const double d = value - target;
  return d * d;
}

// ---------------------------------------------------------------------------
// Adam with bias correction. Constraints are applied separately (projection),
// after the step.

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  AdamOptions opt;
  std::map<std::string, Eigen::VectorXd> m;  // first moments, keyed like params
  std::map<std::string, Eigen::VectorXd> v;  // second moments
  long step_count = 0;
};

inline void adam_step(OptimizerState& st, const std::map<std::string, Eigen::VectorXd>& grads,
                      ParameterSet& params, double lr) {
  st.step_count += 1;
  const double bc1 = 1.0 - std::pow(st.opt.beta1, static_cast<double>(st.step_count));
  const double bc2 = 1.0 - std::pow(st.opt.beta2, static_cast<double>(st.step_count));
  for (const auto& [name, g] : grads) {
    detail::require(g.allFinite(), "adam_step: gradient for '" + name + "' is not finite");
    Param& p = params.at(name);
    if (!p.trainable) continue;
    detail::require(p.value.size() == g.size(),
                    "adam_step: gradient shape mismatch for '" + name + "'");
    Eigen::VectorXd& m = st.m[name];
    Eigen::VectorXd& v = st.v[name];
    if (m.size() == 0) {
      m = Eigen::VectorXd::Zero(g.size());
      v = Eigen::VectorXd::Zero(g.size());
    }
    m = st.opt.beta1 * m + (1.0 - st.opt.beta1) * g;
    v = (st.opt.beta2 * v.array() + (1.0 - st.opt.beta2) * g.array().square()).matrix();
    p.value.array() -=
        lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + st.opt.eps);
  }
}

// ---------------------------------------------------------------------------
// Cosine annealing with plateau restart.
//
//   eta(c) = eta_min + (eta_max - eta_min) (1 + cos(pi c / T_max)) / 2,
//
// where the counter c advances once per epoch, saturates at T_max (eta stays
// at eta_min), and jumps back to 0 when the recent losses have flattened out
// while still above the plateau floor.

struct SchedulerOptions {
  int t_max = 50;
  double eta_max = 5.0;
  double eta_min = 0.0;
  int plateau_window = 6;          // successive differences examined
  double min_change = 0.01;        // below this a difference counts as flat
  double plateau_loss_floor = 0.1; // restarts only fire above this loss
};

struct SchedulerState {
  SchedulerOptions opt;
  int counter = 0;             // in [0, t_max]
  std::deque<double> window;   // most recent losses, at most plateau_window+1

  explicit SchedulerState(SchedulerOptions o = {}) : opt(o) {
    detail::require(opt.t_max >= 1, "scheduler t_max must be >= 1");
    detail::require(opt.eta_min >= 0.0 && opt.eta_min <= opt.eta_max,
                    "scheduler requires 0 <= eta_min <= eta_max");
  }

  double lr() const {
    return opt.eta_min + (opt.eta_max - opt.eta_min) * 0.5 *
                             (1.0 + std::cos(kPi * counter / opt.t_max));
  }
};

// Feeds one epoch's loss; returns the learning rate for the next epoch.
inline double scheduler_step(SchedulerState& st, double loss) {
  st.window.push_back(loss);
  while (static_cast<int>(st.window.size()) > st.opt.plateau_window + 1)
    st.window.pop_front();
  bool restart = false;
  if (static_cast<int>(st.window.size()) == st.opt.plateau_window + 1 &&
      loss > st.opt.plateau_loss_floor) {
    restart = true;
    for (std::size_t i = 1; i < st.window.size(); ++i) {
      if (std::abs(st.window[i] - st.window[i - 1]) >= st.opt.min_change) {
        restart = false;
        break;
      }
    }
  }
  if (restart)
    st.counter = 0;
  else
    st.counter = std::min(st.counter + 1, st.opt.t_max);
  return st.lr();
}

// ---------------------------------------------------------------------------
// Per-epoch log. The loop logs the loss computed BEFORE the step next to the
// parameter values AFTER it, so the snapshot that produced a record's loss is
// the previous record's (or the initial set for the first record);
// best_params() resolves that off-by-one.

using ParamSnapshot = std::map<std::string, Eigen::VectorXd>;

inline ParamSnapshot snapshot_params(const ParameterSet& params) {
  ParamSnapshot s;
  for (const auto& name : params.names()) s.emplace(name, params.at(name).value);
  return s;
}

inline ParameterSet apply_snapshot(ParameterSet base, const ParamSnapshot& snap) {
  for (const auto& [name, value] : snap) {
    Param& p = base.at(name);
    detail::require(p.value.size() == value.size(),
                    "snapshot shape mismatch for '" + name + "'");
    p.value = value;
  }
  return base;
}

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;  // computed from the previous record's parameters
  double lr = 0.0;    // learning rate used by this epoch's step
  ParamSnapshot params;  // values after step + clamp (deep copy)
};

struct RunLog {
  ParamSnapshot initial_params;
  std::vector<EpochRecord> records;

  int best_index() const {
    detail::require(!records.empty(), "empty run log");
    int best = 0;
    for (int i = 1; i < static_cast<int>(records.size()); ++i)
      if (records[i].loss < records[best].loss) best = i;
    return best;
  }

  double best_loss() const { return records[best_index()].loss; }

  const ParamSnapshot& best_params() const {
    const int b = best_index();
    return b == 0 ? initial_params : records[b - 1].params;
  }
};

// ---------------------------------------------------------------------------
// Smooth duration reparameterization.
//
// A run of constant pulses with trainable lengths d_k (us) is replaced by
// envelopes on a frozen 1 ns grid: each pulse contributes its constant level
// times the window
//   Pi_k(t) = s(kappa (t - start_k)) - s(kappa (t - end_k)),
//   s(x) = (1 + tanh(x)) / 2,
// with start/end the cumulative sums of d_k * 1000 in ns. The windows move
// smoothly with the durations while the grid length stays fixed at its
// build-time value ceil(sum d_k * 1000).

namespace detail {

inline double smooth_step(double x) { return 0.5 * (1.0 + std::tanh(x)); }
inline double smooth_step_deriv(double x) {
  const double th = std::tanh(x);
  return 0.5 * (1.0 - th * th);
}

}  // namespace detail

struct DurationModel {
  Register reg;
  DeviceSpec device;
  std::vector<ParamRef> amp_level, det_level, phase_level;  // per pulse
  int grid_ns = 0;    // frozen at build time
  double kappa = 1.0; // edge steepness, 1/ns

  int n_pulses() const { return static_cast<int>(amp_level.size()); }
};

inline DurationModel reparameterize_duration(const Sequence& seq,
                                             const Eigen::VectorXd& durations_us,
                                             double edge_steepness = 1.0) {
  detail::require(!seq.pulses.empty(), "sequence has no pulses");
  detail::require(durations_us.size() == static_cast<Eigen::Index>(seq.pulses.size()),
                  "one duration per pulse required");
  detail::require((durations_us.array() > 0.0).all(), "durations must be positive");
  detail::require(edge_steepness > 0.0, "edge steepness must be positive");
  DurationModel m;
  m.reg = seq.reg;
  m.device = seq.device;
  m.kappa = edge_steepness;
  for (const auto& p : seq.pulses) {
    detail::require(p.amplitude.kind == WaveformSpec::Kind::constant &&
                        p.detuning.kind == WaveformSpec::Kind::constant,
                    "duration reparameterization requires constant pulses");
    m.amp_level.push_back(p.amplitude.value);
    m.det_level.push_back(p.detuning.value);
    m.phase_level.push_back(p.phase);
  }
  const double total_ns = durations_us.sum() * 1000.0;
  m.grid_ns = static_cast<int>(std::ceil(total_ns - 1e-9));
  detail::require(m.grid_ns >= 1, "total duration below 1 ns");
  return m;
}

// Plain envelope evaluation at arbitrary times (ns). Levels resolve through
// `params`; times may lie outside the grid (the windows are defined on all t).
struct EnvelopeSamples {
  Eigen::VectorXd amp, det, phase;
};

inline EnvelopeSamples duration_envelope(const DurationModel& m,
                                         const Eigen::VectorXd& durations_us,
                                         const ParameterSet& params,
                                         const Eigen::VectorXd& times_ns) {
  detail::require(durations_us.size() == m.n_pulses(), "one duration per pulse required");
  detail::require((durations_us.array() > 0.0).all(), "durations must be positive");
  const int n = static_cast<int>(times_ns.size());
  EnvelopeSamples out;
  out.amp = Eigen::VectorXd::Zero(n);
  out.det = Eigen::VectorXd::Zero(n);
  out.phase = Eigen::VectorXd::Zero(n);
  double start = 0.0;
  for (int k = 0; k < m.n_pulses(); ++k) {
    const double end = start + durations_us[k] * 1000.0;
    const double a = m.amp_level[k].resolve(params);
    const double d = m.det_level[k].resolve(params);
    const double ph = m.phase_level[k].resolve(params);
    for (int i = 0; i < n; ++i) {
      const double w = detail::smooth_step(m.kappa * (times_ns[i] - start)) -
                       detail::smooth_step(m.kappa * (times_ns[i] - end));
      out.amp[i] += a * w;
      out.det[i] += d * w;
      out.phase[i] += ph * w;
    }
    start = end;
  }
  return out;
}

}  // namespace rydopt

namespace rydopt::ad {

// Window of pulse `index` over the frozen grid, differentiable in the
// duration vector (us). Samples are taken at bin centers t = i + 0.5 ns.
inline Var duration_window_op(Tape& t, Var durations_us, int index, int grid_ns,
                              double kappa) {
  const RealVec& d = durations_us.real();
  detail::require(index >= 0 && index < d.size(), "pulse index out of range");
  detail::require((d.array() > 0.0).all(), "durations must be positive");
  double start = 0.0;
  for (int m = 0; m < index; ++m) start += d[m] * 1000.0;
  const double end = start + d[index] * 1000.0;
  RealVec w(grid_ns);
  for (int i = 0; i < grid_ns; ++i) {
    const double x = i + 0.5;
    w[i] = detail::smooth_step(kappa * (x - start)) - detail::smooth_step(kappa * (x - end));
  }
  const int did = durations_us.id;
  return t.push(Value{std::move(w)}, {did},
                [did, index, grid_ns, kappa, start, end](Tape& tp, int self) {
                  if (!tp.needs(did)) return;
                  const RealVec& g = tp.grad_real(self);
                  // dw/d(start) = -kappa s'(kappa(x-start)); dw/d(end) = +kappa s'(...),
                  // start = 1000 sum_{m<k} d_m, end = 1000 sum_{m<=k} d_m.
                  double ga = 0.0, ge = 0.0;
                  for (int i = 0; i < grid_ns; ++i) {
                    const double x = i + 0.5;
                    ga += g[i] * kappa * detail::smooth_step_deriv(kappa * (x - start));
                    ge += g[i] * kappa * detail::smooth_step_deriv(kappa * (x - end));
                  }
                  RealVec& gd = tp.grad_real(did);
                  for (int m = 0; m < index; ++m) gd[m] += 1000.0 * (ge - ga);
                  gd[index] += 1000.0 * ge;
                });
}

inline DriveVars sample_duration_model_ad(Tape& t, LeafMap& leaves, const DurationModel& m,
                                          const std::string& durations_name) {
  Var d = leaves.get(durations_name);
  detail::require(d.real().size() == m.n_pulses(),
                  "'" + durations_name + "' must hold one duration per pulse");
  Var amp, det, ph;
  for (int k = 0; k < m.n_pulses(); ++k) {
    Var w = duration_window_op(t, d, k, m.grid_ns, m.kappa);
    Var a = scale_by(t, rydopt::detail::ref_var(t, leaves, m.amp_level[k]), w);
    Var dk = scale_by(t, rydopt::detail::ref_var(t, leaves, m.det_level[k]), w);
    Var pk = scale_by(t, rydopt::detail::ref_var(t, leaves, m.phase_level[k]), w);
    if (k == 0) {
      amp = a;
      det = dk;
      ph = pk;
    } else {
      amp = add(t, amp, a);
      det = add(t, det, dk);
      ph = add(t, ph, pk);
    }
  }
  return DriveVars{amp, det, ph};
}

}  // namespace rydopt::ad

namespace rydopt {

// ---------------------------------------------------------------------------
// Loss assembly and the optimization loop.

enum class LossKind { unitary_infidelity, state_infidelity, expectation_mse };

struct LossSpec {
  LossKind kind = LossKind::unitary_infidelity;
  CMat target_unitary;   // unitary_infidelity
  CVec target_state;     // state_infidelity
  CMat observable;       // expectation_mse
  double target_value = 0.0;
  CMat initial;          // initial state column(s); identity batch for unitaries
};

struct Problem {
  Sequence seq;
  std::optional<DurationModel> duration_model;  // replaces seq sampling when set
  std::string durations_name = "durations";
  LossSpec loss;
  SolverOptions solver;

  const Register& active_register() const {
    return duration_model ? duration_model->reg : seq.reg;
  }
  const DeviceSpec& active_device() const {
    return duration_model ? duration_model->device : seq.device;
  }
};

// Records the full forward pass (sample -> propagate -> loss) on the tape.
// Doubles as the model function for finite-difference gradient checks.
inline ad::Var build_loss(ad::Tape& t, ad::LeafMap& leaves, const Problem& prob) {
  DriveVars drive = prob.duration_model
                        ? ad::sample_duration_model_ad(t, leaves, *prob.duration_model,
                                                       prob.durations_name)
                        : sample_sequence_ad(t, leaves, prob.seq);
  ad::Var out = ad::propagate_op(t, leaves, prob.active_register(), prob.active_device(),
                                 drive, prob.loss.initial, prob.solver);
  switch (prob.loss.kind) {
    case LossKind::unitary_infidelity:
      return ad::sub_from(t, 1.0, ad::unitary_fidelity_op(t, out, prob.loss.target_unitary));
    case LossKind::state_infidelity: {
      detail::require(prob.loss.initial.cols() == 1,
                      "state-fidelity loss needs a single initial state");
      return ad::sub_from(t, 1.0, ad::state_fidelity_op(t, out, prob.loss.target_state));
    }
    case LossKind::expectation_mse:
      return ad::square_error(t, ad::expectation_op(t, out, prob.loss.observable),
                              prob.loss.target_value);
  }
  detail::fail("unreachable loss kind");
}

inline ad::ModelFn model_for(const Problem& prob) {
  return [&prob](ad::Tape& t, ad::LeafMap& leaves, const ParameterSet&) {
    return build_loss(t, leaves, prob);
  };
}

struct OptimizeOptions {
  int epochs = 1000;
  double loss_break = 1e-4;
  AdamOptions adam;
  SchedulerOptions sched;
  bool use_scheduler = true;
};

struct OptimizeCallbacks {
  std::function<void(const EpochRecord&)> on_epoch;
};

// One epoch: forward, backward, adam step, constraint projection, log
// (pre-step loss next to post-step parameters), scheduler advance, break on
// loss_break. The next epoch's forward pass re-samples every waveform from
// the updated ParameterSet, which is the sequence-rebuild step.
inline RunLog run_optimization(const Problem& prob, ParameterSet params,
                               const OptimizeOptions& opt = {},
                               const OptimizeCallbacks& cb = {}) {
  detail::require(opt.epochs >= 1, "epochs must be >= 1");
  RunLog log;
  log.initial_params = snapshot_params(params);
  OptimizerState ost{opt.adam};
  SchedulerState sst{opt.sched};
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    const double lr = opt.use_scheduler ? sst.lr() : opt.sched.eta_max;
    ad::Tape tape;
    ad::LeafMap leaves(tape, params);
    ad::Var loss = build_loss(tape, leaves, prob);
    const double lval = loss.scalar();
    if (!std::isfinite(lval))
      throw std::runtime_error("loss is not finite at epoch " + std::to_string(epoch));
    auto grads = ad::backward_gradients(tape, loss, leaves);
    adam_step(ost, grads, params, lr);
    params = clamp_to_constraints(params);
    log.records.push_back(EpochRecord{epoch, lval, lr, snapshot_params(params)});
    if (cb.on_epoch) cb.on_epoch(log.records.back());
    if (opt.use_scheduler) scheduler_step(sst, lval);
    if (lval < opt.loss_break) break;
  }
  return log;
}

}  // namespace rydopt
