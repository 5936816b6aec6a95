#pragma once
// Envelope mathematics: predefined waveform shapes, 1 ns sampling, the sine
// interpolation scheme for custom waveforms and the bounded control transforms.
// Also defines Pulse/Sequence, which assemble waveforms into a single-channel
// global drive program.

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "rydopt/autograd.hpp"
#include "rydopt/core.hpp"

namespace rydopt {

// ---------------------------------------------------------------------------
// Scalar building blocks.

// Smooth 0 -> 1 transition on h in [0, 1]: s(h) = (1 + sin(pi h - pi/2)) / 2.
// s(0) = 0, s(1) = 1, s(1/2) = 1/2, ds/dh = 0 at both endpoints.
inline double sine_transition(double h) {
  detail::require(h >= 0.0 && h <= 1.0, "sine_transition: h outside [0, 1]");
  return 0.5 * (1.0 + std::sin(kPi * h - kPi / 2.0));
}

// Conventional Blackman window coefficients (0.42, 0.5, 0.08), n samples.
inline Eigen::VectorXd blackman_window(int n) {
  detail::require(n >= 1, "blackman_window: n must be >= 1");
  Eigen::VectorXd w(n);
  if (n == 1) {
    w[0] = 1.0;
    return w;
  }
  for (int k = 0; k < n; ++k) {
    const double x = 2.0 * kPi * k / (n - 1);
    // The endpoints are exactly 0.42 - 0.5 + 0.08 = 0; clamp rounding noise so
    // amplitude envelopes built from the window stay nonnegative.
    w[k] = std::max(0.0, 0.42 - 0.5 * std::cos(x) + 0.08 * std::cos(2.0 * x));
  }
  return w;
}

// Blackman template scaled so the 1 ns Riemann sum (dt = 1e-3 us) integrates
// to exactly 1: multiplying by an area in rad yields samples in rad/us.
inline Eigen::VectorXd blackman_unit_area(int n) {
  Eigen::VectorXd w = blackman_window(n);
  const double integral = w.sum() * kNsToUs;
  return w / integral;
}

// Eq.-style bounded transforms for custom waveform controls.
inline Eigen::VectorXd transform_amplitude_controls(const Eigen::VectorXd& theta,
                                                    double omega_max, double gamma) {
  detail::require(omega_max > 0.0, "transform_amplitude_controls: omega_max must be positive");
  detail::require(gamma > 0.0, "transform_amplitude_controls: gamma must be positive");
  Eigen::VectorXd out(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i)
    out[i] = omega_max / (1.0 + std::exp(-gamma * theta[i]));
  return out;
}

inline Eigen::VectorXd transform_detuning_controls(const Eigen::VectorXd& theta,
                                                   double det_max, double gamma) {
  detail::require(det_max > 0.0, "transform_detuning_controls: det_max must be positive");
  detail::require(gamma > 0.0, "transform_detuning_controls: gamma must be positive");
  Eigen::VectorXd out(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i)
    out[i] = det_max * std::tanh(gamma * theta[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Sine interpolation matrix.
//
// M controls theta_1..theta_M sit at grid points t_m = m * Delta with
// Delta = tau / (M + 1); virtual boundary controls theta_0 = theta_{M+1} = 0
// pin w(0) = w(tau) = 0. For each sampled instant t_k = k the segment index is
// m = floor(k / Delta) and
//   w(t_k) = theta_m (1 - s(h)) + theta_{m+1} s(h),  h = (k - m Delta)/Delta,
// which makes every row of A a convex pair of weights: interior rows sum to 1,
// rows in the first/last segment sum to <= 1 (the zero boundary is folded away).

struct InterpolationMatrix {
  Eigen::MatrixXd entries;  // tau x M
  int duration_ns = 0;
  int n_controls = 0;
  double step_ns = 0.0;  // Delta = tau / (M + 1)
};

inline InterpolationMatrix build_interpolation_matrix(int n_controls, int duration_ns) {
  detail::require(n_controls >= 1, "build_interpolation_matrix: M must be >= 1");
  const double delta = static_cast<double>(duration_ns) / (n_controls + 1);
  detail::require(delta >= 1.0,
                  "build_interpolation_matrix: control spacing below 1 ns "
                  "(need tau >= M + 1)");
  InterpolationMatrix im;
  im.duration_ns = duration_ns;
  im.n_controls = n_controls;
  im.step_ns = delta;
  im.entries = Eigen::MatrixXd::Zero(duration_ns, n_controls);
  for (int k = 0; k < duration_ns; ++k) {
    int m = static_cast<int>(std::floor(k / delta));
    if (m > n_controls) m = n_controls;  // numerical guard at the right edge
    const double h = (k - m * delta) / delta;
    const double s = sine_transition(std::min(1.0, std::max(0.0, h)));
    // Columns are 1-based control indices shifted down by one; the virtual
    // boundary controls (index 0 and M+1) have no column.
    if (m >= 1) im.entries(k, m - 1) = 1.0 - s;
    if (m + 1 <= n_controls) im.entries(k, m) = s;
  }
  return im;
}

namespace detail {

// Interpolation matrices are reused across epochs and finite-difference
// evaluations; cache them by (M, tau).
inline std::shared_ptr<const Eigen::MatrixXd> interpolation_matrix_cached(int m, int tau) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, std::shared_ptr<const Eigen::MatrixXd>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto key = std::make_pair(m, tau);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  auto mat = std::make_shared<const Eigen::MatrixXd>(build_interpolation_matrix(m, tau).entries);
  cache.emplace(key, mat);
  return mat;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// WaveformSpec / Pulse / Sequence.

// A value slot that is either a literal or the name of a ParameterSet entry.
struct ParamRef {
  std::variant<double, std::string> ref;

  ParamRef(double v) : ref(v) {}
  ParamRef(const char* name) : ref(std::string(name)) {}
  ParamRef(std::string name) : ref(std::move(name)) {}

  bool is_name() const { return std::holds_alternative<std::string>(ref); }
  const std::string& name() const { return std::get<std::string>(ref); }
  double literal() const { return std::get<double>(ref); }

  double resolve(const ParameterSet& params) const {
    return is_name() ? params.scalar(name()) : literal();
  }
};

enum class Transform { identity, amplitude_sigmoid, detuning_tanh };

struct WaveformSpec {
  enum class Kind { constant, ramp, blackman, custom };

  Kind kind = Kind::constant;
  int duration_ns = 1;
  ParamRef value{0.0};         // constant
  ParamRef start{0.0};         // ramp
  ParamRef stop{0.0};          // ramp
  ParamRef area{0.0};          // blackman, rad
  std::string controls;        // custom: name of the theta vector parameter
  int n_controls = 0;          // custom: M
  Transform transform = Transform::identity;
  double bound = 0.0;          // custom: Omega_max or |delta_max|
  double gamma = 0.05;         // custom: transform slope

  static WaveformSpec constant_wf(int duration_ns, ParamRef value) {
    WaveformSpec w;
    w.kind = Kind::constant;
    w.duration_ns = duration_ns;
    w.value = std::move(value);
    w.validate();
    return w;
  }

  static WaveformSpec ramp_wf(int duration_ns, ParamRef start, ParamRef stop) {
    WaveformSpec w;
    w.kind = Kind::ramp;
    w.duration_ns = duration_ns;
    w.start = std::move(start);
    w.stop = std::move(stop);
    w.validate();
    return w;
  }

  static WaveformSpec blackman_wf(int duration_ns, ParamRef area) {
    WaveformSpec w;
    w.kind = Kind::blackman;
    w.duration_ns = duration_ns;
    w.area = std::move(area);
    w.validate();
    return w;
  }

  static WaveformSpec custom_wf(int duration_ns, std::string controls, int n_controls,
                                Transform transform, double bound, double gamma = 0.05) {
    WaveformSpec w;
    w.kind = Kind::custom;
    w.duration_ns = duration_ns;
    w.controls = std::move(controls);
    w.n_controls = n_controls;
    w.transform = transform;
    w.bound = bound;
    w.gamma = gamma;
    w.validate();
    return w;
  }

  void validate() const {
    detail::require(duration_ns >= 1, "waveform duration must be >= 1 ns");
    if (kind == Kind::custom) {
      detail::require(n_controls >= 1, "custom waveform needs at least one control");
      detail::require(!controls.empty(), "custom waveform needs a controls parameter name");
      detail::require(static_cast<double>(duration_ns) / (n_controls + 1) >= 1.0,
                      "custom waveform: control spacing below 1 ns");
      if (transform != Transform::identity)
        detail::require(bound > 0.0, "custom waveform transform needs a positive bound");
      detail::require(gamma > 0.0, "custom waveform gamma must be positive");
    }
    if (kind == Kind::blackman && !area.is_name())
      detail::require(area.literal() > 0.0, "blackman area must be positive");
  }
};

struct Pulse {
  WaveformSpec amplitude;
  WaveformSpec detuning;
  ParamRef phase{0.0};
  // Optional trainable duration (us-valued parameter name) consumed by the
  // duration-reparameterization machinery; the integer grid length stays
  // duration_ns() until such a model is built.
  std::optional<std::string> duration_param;

  Pulse(WaveformSpec amp, WaveformSpec det, ParamRef ph)
      : amplitude(std::move(amp)), detuning(std::move(det)), phase(std::move(ph)) {
    detail::require(amplitude.duration_ns == detuning.duration_ns,
                    "pulse amplitude and detuning durations differ");
    // Literal phases are normalized into [0, 2pi); named phases flow through
    // untouched (the Hamiltonian is 2pi-periodic in phi anyway).
    if (!phase.is_name()) {
      double p = std::fmod(phase.literal(), 2.0 * kPi);
      if (p < 0.0) p += 2.0 * kPi;
      phase = ParamRef(p);
    }
  }

  static Pulse constant_pulse(int duration_ns, ParamRef omega, ParamRef delta, ParamRef ph) {
    return Pulse(WaveformSpec::constant_wf(duration_ns, std::move(omega)),
                 WaveformSpec::constant_wf(duration_ns, std::move(delta)), std::move(ph));
  }

  int duration_ns() const { return amplitude.duration_ns; }
};

struct Sequence {
  Register reg;
  DeviceSpec device;
  std::vector<Pulse> pulses;

  int total_duration_ns() const {
    int total = 0;
    for (const auto& p : pulses) total += p.duration_ns();
    return total;
  }

  // Collects every parameter name referenced by the sequence with its expected
  // size; verifies each resolves in `params` with a matching shape.
  std::map<std::string, int> declared_variables(const ParameterSet& params) const {
    std::map<std::string, int> vars;
    auto note = [&](const std::string& name, int size) {
      auto it = vars.find(name);
      if (it == vars.end()) {
        vars.emplace(name, size);
      } else {
        detail::require(it->second == size,
                        "parameter '" + name + "' referenced with inconsistent shapes");
      }
      detail::require(params.contains(name), "unbound sequence variable '" + name + "'");
      detail::require(params.at(name).value.size() == size,
                      "parameter '" + name + "': declared size " + std::to_string(size) +
                          " but bound value has size " +
                          std::to_string(params.at(name).value.size()));
    };
    auto note_ref = [&](const ParamRef& r) {
      if (r.is_name()) note(r.name(), 1);
    };
    for (const auto& p : pulses) {
      for (const WaveformSpec* w : {&p.amplitude, &p.detuning}) {
        switch (w->kind) {
          case WaveformSpec::Kind::constant: note_ref(w->value); break;
          case WaveformSpec::Kind::ramp:
            note_ref(w->start);
            note_ref(w->stop);
            break;
          case WaveformSpec::Kind::blackman: note_ref(w->area); break;
          case WaveformSpec::Kind::custom: note(w->controls, w->n_controls); break;
        }
      }
      note_ref(p.phase);
      if (p.duration_param) note(*p.duration_param, 1);
    }
    return vars;
  }

  void validate(const ParameterSet& params) const {
    reg.validate();
    device.validate();
    detail::require(total_duration_ns() >= 1, "sequence must last at least 1 ns");
    (void)declared_variables(params);
  }
};

// Per-sample drive on the 1 ns grid. amp >= 0 is guaranteed by construction
// for the supported waveform kinds under their constraints.
struct DiscretizedDrive {
  Eigen::VectorXd amp;    // rad/us
  Eigen::VectorXd det;    // rad/us
  Eigen::VectorXd phase;  // rad, piecewise-constant per pulse

  int duration_ns() const { return static_cast<int>(amp.size()); }

  void validate() const {
    detail::require(amp.size() == det.size() && amp.size() == phase.size(),
                    "drive vectors must share one length");
    detail::require(amp.size() >= 1, "drive must cover at least 1 ns");
  }
};

// ---------------------------------------------------------------------------
// Plain sampling (no gradient recording).

inline Eigen::VectorXd sample_waveform(const WaveformSpec& w, const ParameterSet& params) {
  w.validate();
  const int n = w.duration_ns;
  switch (w.kind) {
    case WaveformSpec::Kind::constant:
      return Eigen::VectorXd::Constant(n, w.value.resolve(params));
    case WaveformSpec::Kind::ramp: {
      const double s = w.start.resolve(params), e = w.stop.resolve(params);
      Eigen::VectorXd v(n);
      for (int k = 0; k < n; ++k) v[k] = s + (e - s) * (static_cast<double>(k) / n);
      return v;
    }
    case WaveformSpec::Kind::blackman: {
      const double area = w.area.resolve(params);
      detail::require(area > 0.0, "blackman area must be positive");
      return blackman_unit_area(n) * area;
    }
    case WaveformSpec::Kind::custom: {
      const Eigen::VectorXd& theta = params.at(w.controls).value;
      detail::require(theta.size() == w.n_controls,
                      "custom waveform '" + w.controls + "': control size mismatch");
      Eigen::VectorXd tprime;
      switch (w.transform) {
        case Transform::identity: tprime = theta; break;
        case Transform::amplitude_sigmoid:
          tprime = transform_amplitude_controls(theta, w.bound, w.gamma);
          break;
        case Transform::detuning_tanh:
          tprime = transform_detuning_controls(theta, w.bound, w.gamma);
          break;
      }
      auto A = detail::interpolation_matrix_cached(w.n_controls, n);
      return (*A) * tprime;
    }
  }
  detail::fail("unreachable waveform kind");
}

inline DiscretizedDrive sample_sequence(const Sequence& seq, const ParameterSet& params) {
  seq.validate(params);
  const int total = seq.total_duration_ns();
  DiscretizedDrive d;
  d.amp.resize(total);
  d.det.resize(total);
  d.phase.resize(total);
  int off = 0;
  for (const auto& p : seq.pulses) {
    const int n = p.duration_ns();
    d.amp.segment(off, n) = sample_waveform(p.amplitude, params);
    d.det.segment(off, n) = sample_waveform(p.detuning, params);
    d.phase.segment(off, n).setConstant(p.phase.resolve(params));
    off += n;
  }
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------
// Tape-recorded sampling. Mirrors the plain path; every named parameter reads
// through the LeafMap so repeated references share one gradient slot.

namespace detail {

inline ad::Var ref_var(ad::Tape& t, ad::LeafMap& leaves, const ParamRef& r) {
  if (r.is_name()) return leaves.get(r.name());
  return t.constant_scalar(r.literal());
}

}  // namespace detail

inline ad::Var sample_waveform_ad(ad::Tape& t, ad::LeafMap& leaves, const WaveformSpec& w) {
  w.validate();
  const int n = w.duration_ns;
  switch (w.kind) {
    case WaveformSpec::Kind::constant:
      return ad::broadcast(t, detail::ref_var(t, leaves, w.value), n);
    case WaveformSpec::Kind::ramp:
      return ad::ramp_fill(t, detail::ref_var(t, leaves, w.start),
                           detail::ref_var(t, leaves, w.stop), n);
    case WaveformSpec::Kind::blackman:
      return ad::scaled_template(t, blackman_unit_area(n),
                                 detail::ref_var(t, leaves, w.area));
    case WaveformSpec::Kind::custom: {
      ad::Var theta = leaves.get(w.controls);
      detail::require(theta.real().size() == w.n_controls,
                      "custom waveform '" + w.controls + "': control size mismatch");
      ad::Var tprime = theta;
      switch (w.transform) {
        case Transform::identity: break;
        case Transform::amplitude_sigmoid:
          tprime = ad::sigmoid_bounded(t, theta, w.bound, w.gamma);
          break;
        case Transform::detuning_tanh:
          tprime = ad::tanh_bounded(t, theta, w.bound, w.gamma);
          break;
      }
      auto A = detail::interpolation_matrix_cached(w.n_controls, n);
      return ad::matvec(t, A, tprime);
    }
  }
  detail::fail("unreachable waveform kind");
}

struct DriveVars {
  ad::Var amp;
  ad::Var det;
  ad::Var phase;
};

inline DriveVars sample_sequence_ad(ad::Tape& t, ad::LeafMap& leaves, const Sequence& seq) {
  seq.validate(leaves.params());
  std::vector<ad::Var> amps, dets, phases;
  for (const auto& p : seq.pulses) {
    amps.push_back(sample_waveform_ad(t, leaves, p.amplitude));
    dets.push_back(sample_waveform_ad(t, leaves, p.detuning));
    phases.push_back(ad::broadcast(t, detail::ref_var(t, leaves, p.phase), p.duration_ns()));
  }
  return DriveVars{ad::concat(t, amps), ad::concat(t, dets), ad::concat(t, phases)};
}

}  // namespace rydopt
