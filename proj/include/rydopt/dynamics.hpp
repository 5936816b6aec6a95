#pragma once
// Rydberg Hamiltonian assembly and Schrodinger propagation.
//
// Conventions, fixed across the library:
//   - Basis index bit j set  <=>  qubit j in |1> (the Rydberg state).
//   - sigma_z |1> = +|1>, so n = (1 + sigma_z)/2 counts Rydberg population.
//   - H_k = sum_j (Omega_k/2)[cos(phi_k) sx_j - sin(phi_k) sy_j]
//           - sum_j (delta_k/2) sz_j + sum_{i<j} U_ij n_i n_j,   hbar = 1,
//     with Omega, delta in rad/us, U_ij = C6 / r_ij^6, and phi in rad.
//   - Time is integrated in ns with zero-order hold per 1 ns sample:
//     d psi/dt_ns = -i * 1e-3 * H_k * psi.
//
// The state is a 2^N x B complex matrix (B = 1 for a single state, B = 2^N
// for unitary reconstruction). H is applied matrix-free by bit manipulation.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <complex>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "rydopt/autograd.hpp"
#include "rydopt/core.hpp"
#include "rydopt/waveforms.hpp"

namespace rydopt {

using Cplx = std::complex<double>;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;

// ---------------------------------------------------------------------------
// Interaction geometry.

struct InteractionPair {
  int i = 0;
  int j = 0;
  double strength = 0.0;  // rad/us
};

inline std::vector<InteractionPair> interaction_pairs(const Register& reg,
                                                      const DeviceSpec& dev) {
  reg.validate();
  dev.validate();
  std::vector<InteractionPair> pairs;
  const auto& atoms = reg.atoms();
  for (int i = 0; i < reg.n(); ++i) {
    for (int j = i + 1; j < reg.n(); ++j) {
      const double dx = atoms[i].x - atoms[j].x;
      const double dy = atoms[i].y - atoms[j].y;
      const double r2 = dx * dx + dy * dy;
      pairs.push_back({i, j, dev.c6 / (r2 * r2 * r2)});
    }
  }
  return pairs;
}

inline Eigen::MatrixXd interaction_matrix(const Register& reg, const DeviceSpec& dev) {
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(reg.n(), reg.n());
  for (const auto& p : interaction_pairs(reg, dev)) {
    u(p.i, p.j) = p.strength;
    u(p.j, p.i) = p.strength;
  }
  return u;
}

// ---------------------------------------------------------------------------
// HamiltonianProgram: drive samples plus static interaction.

struct HamiltonianProgram {
  int n_qubits = 0;
  Eigen::MatrixXd interaction;  // N x N, symmetric, zero diagonal, rad/us
  DiscretizedDrive drive;

  // Derived diagonals, filled by finalize():
  //   udiag[b]    = sum of U_ij over pairs with both bits set in b,
  //   popshift[b] = N/2 - popcount(b)   (coefficient of delta on the diagonal).
  Eigen::VectorXd udiag;
  Eigen::VectorXd popshift;
  double udiag_max = 0.0;

  Eigen::Index dim() const { return Eigen::Index(1) << n_qubits; }
  int duration_ns() const { return drive.duration_ns(); }

  void validate() const {
    detail::require(n_qubits >= 1, "program needs at least one qubit");
    detail::require(n_qubits <= 24, "program dimension 2^N exceeds the supported range");
    detail::require(interaction.rows() == n_qubits && interaction.cols() == n_qubits,
                    "interaction matrix shape must be N x N");
    for (int i = 0; i < n_qubits; ++i) {
      detail::require(interaction(i, i) == 0.0, "interaction diagonal must be zero");
      for (int j = i + 1; j < n_qubits; ++j) {
        detail::require(std::abs(interaction(i, j) - interaction(j, i)) <= 1e-12,
                        "interaction matrix must be symmetric");
        detail::require(interaction(i, j) > 0.0,
                        "interaction strengths must be strictly positive");
      }
    }
    drive.validate();
  }

  void finalize() {
    const Eigen::Index d = dim();
    udiag.resize(d);
    popshift.resize(d);
    udiag_max = 0.0;
    for (Eigen::Index b = 0; b < d; ++b) {
      popshift[b] = 0.5 * n_qubits - std::popcount(static_cast<unsigned long long>(b));
      double u = 0.0;
      for (int i = 0; i < n_qubits; ++i) {
        if (!((b >> i) & 1)) continue;
        for (int j = i + 1; j < n_qubits; ++j)
          if ((b >> j) & 1) u += interaction(i, j);
      }
      udiag[b] = u;
      udiag_max = std::max(udiag_max, u);
    }
  }

  bool finalized() const { return udiag.size() == dim(); }
};

inline HamiltonianProgram make_hamiltonian_program(int n_qubits,
                                                   Eigen::MatrixXd interaction,
                                                   DiscretizedDrive drive) {
  HamiltonianProgram p;
  p.n_qubits = n_qubits;
  p.interaction = std::move(interaction);
  p.drive = std::move(drive);
  p.validate();
  p.finalize();
  return p;
}

inline HamiltonianProgram build_hamiltonian_program(const Register& reg,
                                                    const DeviceSpec& dev,
                                                    const DiscretizedDrive& drive) {
  return make_hamiltonian_program(reg.n(), interaction_matrix(reg, dev), drive);
}

// Dense H_k for oracles and observables; the propagation path never builds it.
inline CMat build_hamiltonian_step(const HamiltonianProgram& prog, int k) {
  detail::require(prog.finalized(), "program not finalized");
  detail::require(k >= 0 && k < prog.duration_ns(),
                  "build_hamiltonian_step: sample index out of range");
  const Eigen::Index d = prog.dim();
  const double amp = prog.drive.amp[k];
  const double det = prog.drive.det[k];
  const Cplx up = Cplx(0.5 * amp) * std::exp(Cplx(0.0, prog.drive.phase[k]));
  CMat h = CMat::Zero(d, d);
  for (Eigen::Index b = 0; b < d; ++b) h(b, b) = det * prog.popshift[b] + prog.udiag[b];
  for (int q = 0; q < prog.n_qubits; ++q) {
    const Eigen::Index m = Eigen::Index(1) << q;
    for (Eigen::Index base = 0; base < d; base += 2 * m) {
      for (Eigen::Index r = 0; r < m; ++r) {
        h(base + m + r, base + r) += up;
        h(base + r, base + m + r) += std::conj(up);
      }
    }
  }
  return h;
}

namespace detail {

// out = pref * H(amp, det, phase) * x, matrix-free, columnwise.
inline void apply_scaled(const HamiltonianProgram& prog, double amp, double det,
                         double phase, Cplx pref, const CMat& x, CMat& out) {
  const Eigen::Index d = prog.dim();
  const Eigen::Index ncol = x.cols();
  out.resize(d, ncol);
  const Cplx up = pref * Cplx(0.5 * amp) * std::exp(Cplx(0.0, phase));
  const Cplx dn = pref * Cplx(0.5 * amp) * std::exp(Cplx(0.0, -phase));
  const double* ud = prog.udiag.data();
  const double* ps = prog.popshift.data();
  for (Eigen::Index c = 0; c < ncol; ++c) {
    const Cplx* px = x.data() + c * d;
    Cplx* po = out.data() + c * d;
    for (Eigen::Index b = 0; b < d; ++b) po[b] = pref * ((det * ps[b] + ud[b]) * px[b]);
    if (amp == 0.0) continue;
    for (int q = 0; q < prog.n_qubits; ++q) {
      const Eigen::Index m = Eigen::Index(1) << q;
      for (Eigen::Index base = 0; base < d; base += 2 * m) {
        for (Eigen::Index r = 0; r < m; ++r) {
          const Eigen::Index b0 = base + r;
          const Eigen::Index b1 = b0 + m;
          po[b1] += up * px[b0];
          po[b0] += dn * px[b1];
        }
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Integration.

enum class Solver { dp5_adaptive, rk4_fixed };

inline Solver solver_from_string(const std::string& s) {
  if (s == "dp5_adaptive") return Solver::dp5_adaptive;
  if (s == "rk4_fixed") return Solver::rk4_fixed;
  detail::fail("unknown solver '" + s + "'");
}

inline std::string solver_to_string(Solver s) {
  return s == Solver::dp5_adaptive ? "dp5_adaptive" : "rk4_fixed";
}

struct SolverOptions {
  Solver method = Solver::dp5_adaptive;
  double atol = 1e-8;
  double rtol = 1e-6;
  int rk4_substeps = 4;        // per 1 ns sample, before the rotation cap
  double phase_cap = 0.04;     // max Hamiltonian rotation angle per substep, rad
  double h_min = 1e-6;         // ns; below this the controller gives up
  int checkpoint_every = 64;   // samples between stored reverse-mode states
};

namespace detail {

// Largest substep (ns) keeping ||H|| h below the rotation cap for sample k.
// Bounds ||H|| by N (|Omega| + |delta|)/2 + max udiag.
inline double substep_cap_ns(const HamiltonianProgram& prog, int k, double phase_cap) {
  const double bound = 0.5 * prog.n_qubits *
                           (std::abs(prog.drive.amp[k]) + std::abs(prog.drive.det[k])) +
                       prog.udiag_max;
  const double rate = kNsToUs * bound;  // rad per ns
  if (rate <= 0.0) return 1.0;
  return std::min(1.0, phase_cap / rate);
}

// Dormand-Prince 5(4) tableau. b7 = 0, so gradients never touch stage 7.
inline constexpr double kA21 = 1.0 / 5.0;
inline constexpr double kA31 = 3.0 / 40.0, kA32 = 9.0 / 40.0;
inline constexpr double kA41 = 44.0 / 45.0, kA42 = -56.0 / 15.0, kA43 = 32.0 / 9.0;
inline constexpr double kA51 = 19372.0 / 6561.0, kA52 = -25360.0 / 2187.0,
                        kA53 = 64448.0 / 6561.0, kA54 = -212.0 / 729.0;
inline constexpr double kA61 = 9017.0 / 3168.0, kA62 = -355.0 / 33.0,
                        kA63 = 46732.0 / 5247.0, kA64 = 49.0 / 176.0,
                        kA65 = -5103.0 / 18656.0;
inline constexpr double kB1 = 35.0 / 384.0, kB3 = 500.0 / 1113.0, kB4 = 125.0 / 192.0,
                        kB5 = -2187.0 / 6784.0, kB6 = 11.0 / 84.0;
inline constexpr double kE1 = 71.0 / 57600.0, kE3 = -71.0 / 16695.0, kE4 = 71.0 / 1920.0,
                        kE5 = -17253.0 / 339200.0, kE6 = 22.0 / 525.0, kE7 = -1.0 / 40.0;

// Classical RK4 weights.
inline constexpr double kR1 = 1.0 / 6.0, kR2 = 1.0 / 3.0, kR3 = 1.0 / 3.0, kR4 = 1.0 / 6.0;

struct StepWorkspace {
  CMat k1, k2, k3, k4, k5, k6, k7, ytmp, ynew, ev;
};

// Weighted RMS error norm: sc_i = atol + rtol * max(|y_i|, |ynew_i|).
inline double error_norm(const CMat& ev, const CMat& y0, const CMat& y1, double atol,
                         double rtol) {
  const Eigen::Index n = ev.size();
  const Cplx* pe = ev.data();
  const Cplx* p0 = y0.data();
  const Cplx* p1 = y1.data();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double sc = atol + rtol * std::max(std::abs(p0[i]), std::abs(p1[i]));
    acc += std::norm(pe[i]) / (sc * sc);
  }
  return std::sqrt(acc / static_cast<double>(n));
}

// Adaptive integration of one 1 ns sample (H constant inside it). h_carry is
// the persistent step proposal; accepted substeps are appended to hs.
inline void integrate_sample_dp5(const HamiltonianProgram& prog, int k, CMat& y,
                                 const SolverOptions& opt, double& h_carry,
                                 std::vector<double>* hs, StepWorkspace& ws) {
  const double amp = prog.drive.amp[k];
  const double det = prog.drive.det[k];
  const double ph = prog.drive.phase[k];
  const Cplx pref(0.0, -kNsToUs);
  auto f = [&](const CMat& in, CMat& out) { apply_scaled(prog, amp, det, ph, pref, in, out); };

  const double cap = substep_cap_ns(prog, k, opt.phase_cap);
  f(y, ws.k1);
  double remaining = 1.0;
  while (true) {
    double h = std::min(h_carry, cap);
    bool last = false;
    if (h >= remaining - 1e-12) {
      h = remaining;
      last = true;
    }
    ws.ytmp = y + (h * kA21) * ws.k1;
    f(ws.ytmp, ws.k2);
    ws.ytmp = y + h * (kA31 * ws.k1 + kA32 * ws.k2);
    f(ws.ytmp, ws.k3);
    ws.ytmp = y + h * (kA41 * ws.k1 + kA42 * ws.k2 + kA43 * ws.k3);
    f(ws.ytmp, ws.k4);
    ws.ytmp = y + h * (kA51 * ws.k1 + kA52 * ws.k2 + kA53 * ws.k3 + kA54 * ws.k4);
    f(ws.ytmp, ws.k5);
    ws.ytmp = y + h * (kA61 * ws.k1 + kA62 * ws.k2 + kA63 * ws.k3 + kA64 * ws.k4 +
                       kA65 * ws.k5);
    f(ws.ytmp, ws.k6);
    ws.ynew = y + h * (kB1 * ws.k1 + kB3 * ws.k3 + kB4 * ws.k4 + kB5 * ws.k5 + kB6 * ws.k6);
    f(ws.ynew, ws.k7);  // FSAL: valid as k1 of the next substep in this sample
    ws.ev = h * (kE1 * ws.k1 + kE3 * ws.k3 + kE4 * ws.k4 + kE5 * ws.k5 + kE6 * ws.k6 +
                 kE7 * ws.k7);
    const double err = error_norm(ws.ev, y, ws.ynew, opt.atol, opt.rtol);
    if (err <= 1.0) {
      y.swap(ws.ynew);
      ws.k1.swap(ws.k7);
      if (hs) hs->push_back(h);
      remaining -= h;
      const double fac =
          err == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
      h_carry = h * fac;
      if (last || remaining <= 1e-12) break;
    } else {
      h_carry = h * std::clamp(0.9 * std::pow(err, -0.2), 0.2, 1.0);
      require(h_carry >= opt.h_min,
              "dp5: step size underflow; tolerances unreachable for this drive");
    }
  }
}

inline void integrate_sample_rk4(const HamiltonianProgram& prog, int k, CMat& y,
                                 const SolverOptions& opt, std::vector<double>* hs,
                                 StepWorkspace& ws) {
  const double amp = prog.drive.amp[k];
  const double det = prog.drive.det[k];
  const double ph = prog.drive.phase[k];
  const Cplx pref(0.0, -kNsToUs);
  auto f = [&](const CMat& in, CMat& out) { apply_scaled(prog, amp, det, ph, pref, in, out); };

  const double cap = substep_cap_ns(prog, k, opt.phase_cap);
  const int n = std::max(opt.rk4_substeps, static_cast<int>(std::ceil(1.0 / cap - 1e-12)));
  const double h = 1.0 / n;
  for (int s = 0; s < n; ++s) {
    f(y, ws.k1);
    ws.ytmp = y + (0.5 * h) * ws.k1;
    f(ws.ytmp, ws.k2);
    ws.ytmp = y + (0.5 * h) * ws.k2;
    f(ws.ytmp, ws.k3);
    ws.ytmp = y + h * ws.k3;
    f(ws.ytmp, ws.k4);
    y += h * (kR1 * ws.k1 + kR2 * ws.k2 + kR3 * ws.k3 + kR4 * ws.k4);
    if (hs) hs->push_back(h);
  }
}

inline void integrate_sample(const HamiltonianProgram& prog, int k, CMat& y,
                             const SolverOptions& opt, double& h_carry,
                             std::vector<double>* hs, StepWorkspace& ws) {
  if (opt.method == Solver::dp5_adaptive)
    integrate_sample_dp5(prog, k, y, opt, h_carry, hs, ws);
  else
    integrate_sample_rk4(prog, k, y, opt, hs, ws);
}

inline void check_initial(const HamiltonianProgram& prog, const CMat& initial) {
  require(prog.finalized(), "program not finalized");
  require(initial.rows() == prog.dim(), "initial state dimension mismatch");
  require(initial.cols() >= 1, "initial state has no columns");
  for (Eigen::Index c = 0; c < initial.cols(); ++c)
    require(std::abs(initial.col(c).norm() - 1.0) <= 1e-6,
            "initial state column is not normalized");
}

}  // namespace detail

struct Trajectory {
  std::vector<double> times;  // ns, strictly increasing, 0 first, tau last
  std::vector<CMat> states;   // one per time, 2^N x B
};

// store_every <= 0 stores endpoints only.
inline Trajectory propagate(const HamiltonianProgram& prog, const CMat& initial,
                            const SolverOptions& opt = {}, int store_every = 0) {
  detail::check_initial(prog, initial);
  const int total = prog.duration_ns();
  Trajectory tr;
  tr.times.push_back(0.0);
  tr.states.push_back(initial);
  CMat y = initial;
  double h_carry = 1.0;
  detail::StepWorkspace ws;
  for (int k = 0; k < total; ++k) {
    detail::integrate_sample(prog, k, y, opt, h_carry, nullptr, ws);
    const int t = k + 1;
    if (t == total || (store_every > 0 && t % store_every == 0)) {
      tr.times.push_back(static_cast<double>(t));
      tr.states.push_back(y);
    }
  }
  return tr;
}

inline CMat propagate_final(const HamiltonianProgram& prog, const CMat& initial,
                            const SolverOptions& opt = {}) {
  detail::check_initial(prog, initial);
  CMat y = initial;
  double h_carry = 1.0;
  detail::StepWorkspace ws;
  for (int k = 0; k < prog.duration_ns(); ++k)
    detail::integrate_sample(prog, k, y, opt, h_carry, nullptr, ws);
  return y;
}

// Forward pass with everything the reverse sweep needs: accepted substep sizes
// per sample (the backward pass re-runs exactly these, never the controller)
// and periodic state checkpoints.
struct ForwardRecord {
  std::vector<std::vector<double>> substeps;
  std::vector<CMat> checkpoints;  // state at sample start, every `interval` samples
  int interval = 64;
  CMat final_state;
};

inline ForwardRecord propagate_recorded(const HamiltonianProgram& prog, const CMat& initial,
                                        const SolverOptions& opt = {}) {
  detail::check_initial(prog, initial);
  const int total = prog.duration_ns();
  ForwardRecord rec;
  rec.interval = std::max(1, opt.checkpoint_every);
  rec.substeps.resize(total);
  CMat y = initial;
  double h_carry = 1.0;
  detail::StepWorkspace ws;
  for (int k = 0; k < total; ++k) {
    if (k % rec.interval == 0) rec.checkpoints.push_back(y);
    detail::integrate_sample(prog, k, y, opt, h_carry, &rec.substeps[k], ws);
  }
  rec.final_state = std::move(y);
  return rec;
}

// Dense matrix-exponential reference: exact ZOH evolution per 1 ns sample via
// eigendecomposition. Independent of the Runge-Kutta path; used as an oracle.
inline CMat propagate_expm_reference(const HamiltonianProgram& prog, const CMat& initial) {
  detail::require(prog.n_qubits <= 10, "expm reference: dense path guarded to N <= 10");
  detail::check_initial(prog, initial);
  const Eigen::Index d = prog.dim();
  CMat y = initial;
  for (int k = 0; k < prog.duration_ns(); ++k) {
    const CMat h = build_hamiltonian_step(prog, k);
    Eigen::SelfAdjointEigenSolver<CMat> es(h);
    detail::require(es.info() == Eigen::Success, "eigendecomposition failed");
    CVec phase(d);
    for (Eigen::Index b = 0; b < d; ++b)
      phase[b] = std::exp(Cplx(0.0, -kNsToUs * es.eigenvalues()[b]));
    y = es.eigenvectors() * (phase.asDiagonal() * (es.eigenvectors().adjoint() * y));
  }
  return y;
}

inline CMat reconstruct_unitary(const HamiltonianProgram& prog,
                                const SolverOptions& opt = {}) {
  detail::require(prog.n_qubits <= 10, "reconstruct_unitary: guarded to N <= 10");
  return propagate_final(prog, CMat::Identity(prog.dim(), prog.dim()), opt);
}

// ---------------------------------------------------------------------------
// Observables and fidelities (plain, non-recording).

inline double expectation(const CVec& psi, const CMat& observable) {
  detail::require(observable.rows() == observable.cols(), "observable must be square");
  detail::require(psi.size() == observable.rows(), "state/observable dimension mismatch");
  detail::require((observable - observable.adjoint()).cwiseAbs().maxCoeff() <= 1e-10,
                  "observable is not Hermitian");
  const Cplx e = psi.dot(observable * psi);
  detail::require(std::abs(e.imag()) <= 1e-10, "expectation has an imaginary residual");
  return e.real();
}

inline double unitary_fidelity(const CMat& u_sim, const CMat& u_target) {
  detail::require(u_sim.rows() == u_sim.cols(), "u_sim must be square");
  detail::require(u_sim.rows() == u_target.rows() && u_sim.cols() == u_target.cols(),
                  "unitary dimension mismatch");
  const Cplx tr = u_sim.conjugate().cwiseProduct(u_target).sum();
  return std::abs(tr) / static_cast<double>(u_sim.rows());
}

inline double state_fidelity(const CVec& psi, const CVec& target) {
  detail::require(psi.size() == target.size(), "state dimension mismatch");
  detail::require(std::abs(psi.norm() - 1.0) <= 1e-6, "psi is not normalized");
  detail::require(std::abs(target.norm() - 1.0) <= 1e-6, "target is not normalized");
  return std::norm(psi.dot(target));
}

namespace detail {

inline CMat kron(const CMat& a, const CMat& b) {
  CMat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

}  // namespace detail

inline CMat hadamard_target(int n_qubits) {
  detail::require(n_qubits >= 1, "hadamard_target: need at least one qubit");
  CMat h1(2, 2);
  h1 << 1.0, 1.0, 1.0, -1.0;
  h1 /= std::sqrt(2.0);
  CMat h = h1;
  for (int q = 1; q < n_qubits; ++q) h = detail::kron(h, h1);
  return h;
}

// Ratio of the reached Rabi amplitude to the nearest-neighbor interaction
// J = C6 / r_min^6; small values indicate blockade-dominated dynamics.
inline double nn_interaction_ratio(const Register& reg, const DeviceSpec& dev,
                                   double omega_max_reached) {
  detail::require(reg.n() >= 2, "nn_interaction_ratio: need at least two atoms");
  double rmin2 = std::numeric_limits<double>::infinity();
  const auto& atoms = reg.atoms();
  for (int i = 0; i < reg.n(); ++i) {
    for (int j = i + 1; j < reg.n(); ++j) {
      const double dx = atoms[i].x - atoms[j].x;
      const double dy = atoms[i].y - atoms[j].y;
      rmin2 = std::min(rmin2, dx * dx + dy * dy);
    }
  }
  const double j_nn = dev.c6 / (rmin2 * rmin2 * rmin2);
  return omega_max_reached / j_nn;
}

// ---------------------------------------------------------------------------
// Discrete adjoint through the recorded integrator steps.
//
// One Runge-Kutta substep y' = A y (A = -i kappa H) with stage inputs Y_i and
// weights b, a reverses as
//   mu_i = h (b_i lambda + sum_{j>i} a_ji nu_j),   nu_i = A^T* mu_i,
//   lambda <- lambda + sum_i nu_i,
// and every Hamiltonian parameter p accumulates
//   dL/dp += sum_i kappa * Im<mu_i, (dH/dp) Y_i>.
// For DP5 b7 = 0, so stage 7 never enters the reverse sweep.

namespace detail {

struct SubstepStages {
  double h = 0.0;
  std::vector<CMat> y;  // stage inputs Y_1..Y_s (s = 6 for dp5, 4 for rk4)
};

// Re-runs one sample with frozen substep sizes; optionally stores stage inputs.
inline void replay_sample(const HamiltonianProgram& prog, int k, CMat& y,
                          const std::vector<double>& hs, Solver method,
                          std::vector<SubstepStages>* stages, StepWorkspace& ws) {
  const double amp = prog.drive.amp[k];
  const double det = prog.drive.det[k];
  const double ph = prog.drive.phase[k];
  const Cplx pref(0.0, -kNsToUs);
  auto f = [&](const CMat& in, CMat& out) { apply_scaled(prog, amp, det, ph, pref, in, out); };

  for (const double h : hs) {
    if (method == Solver::dp5_adaptive) {
      f(y, ws.k1);
      ws.ytmp = y + (h * kA21) * ws.k1;
      f(ws.ytmp, ws.k2);
      if (stages) {
        SubstepStages st;
        st.h = h;
        st.y.resize(6);
        st.y[0] = y;
        st.y[1] = ws.ytmp;
        stages->push_back(std::move(st));
      }
      ws.ytmp = y + h * (kA31 * ws.k1 + kA32 * ws.k2);
      f(ws.ytmp, ws.k3);
      if (stages) stages->back().y[2] = ws.ytmp;
      ws.ytmp = y + h * (kA41 * ws.k1 + kA42 * ws.k2 + kA43 * ws.k3);
      f(ws.ytmp, ws.k4);
      if (stages) stages->back().y[3] = ws.ytmp;
      ws.ytmp = y + h * (kA51 * ws.k1 + kA52 * ws.k2 + kA53 * ws.k3 + kA54 * ws.k4);
      f(ws.ytmp, ws.k5);
      if (stages) stages->back().y[4] = ws.ytmp;
      ws.ytmp = y + h * (kA61 * ws.k1 + kA62 * ws.k2 + kA63 * ws.k3 + kA64 * ws.k4 +
                         kA65 * ws.k5);
      f(ws.ytmp, ws.k6);
      if (stages) stages->back().y[5] = ws.ytmp;
      y += h * (kB1 * ws.k1 + kB3 * ws.k3 + kB4 * ws.k4 + kB5 * ws.k5 + kB6 * ws.k6);
    } else {
      f(y, ws.k1);
      ws.ytmp = y + (0.5 * h) * ws.k1;
      f(ws.ytmp, ws.k2);
      if (stages) {
        SubstepStages st;
        st.h = h;
        st.y.resize(4);
        st.y[0] = y;
        st.y[1] = ws.ytmp;
        stages->push_back(std::move(st));
      }
      ws.ytmp = y + (0.5 * h) * ws.k2;
      f(ws.ytmp, ws.k3);
      if (stages) stages->back().y[2] = ws.ytmp;
      ws.ytmp = y + h * ws.k3;
      f(ws.ytmp, ws.k4);
      if (stages) stages->back().y[3] = ws.ytmp;
      y += h * (kR1 * ws.k1 + kR2 * ws.k2 + kR3 * ws.k3 + kR4 * ws.k4);
    }
  }
}

struct SampleGrads {
  double amp = 0.0;
  double det = 0.0;
  double phase = 0.0;
};

// kappa * Im<mu, (dH/dp) Y> for the three drive parameters of sample k; wpos,
// when requested, accumulates Im(conj(mu[b]) Y[b]) per basis state (the kappa
// and the pair structure are applied once at the end of the sweep).
inline void accumulate_stage_dots(const HamiltonianProgram& prog, double amp, double phase,
                                  const CMat& mu, const CMat& ystage, SampleGrads& g,
                                  Eigen::VectorXd* wpos) {
  const Eigen::Index d = prog.dim();
  const Eigen::Index ncol = mu.cols();
  const double* ps = prog.popshift.data();
  Cplx s_up(0.0, 0.0), s_dn(0.0, 0.0), s_det(0.0, 0.0);
  for (Eigen::Index c = 0; c < ncol; ++c) {
    const Cplx* pm = mu.data() + c * d;
    const Cplx* py = ystage.data() + c * d;
    for (int q = 0; q < prog.n_qubits; ++q) {
      const Eigen::Index m = Eigen::Index(1) << q;
      for (Eigen::Index base = 0; base < d; base += 2 * m) {
        for (Eigen::Index r = 0; r < m; ++r) {
          const Eigen::Index b0 = base + r;
          const Eigen::Index b1 = b0 + m;
          s_up += std::conj(pm[b1]) * py[b0];
          s_dn += std::conj(pm[b0]) * py[b1];
        }
      }
    }
    if (wpos) {
      double* pw = wpos->data();
      for (Eigen::Index b = 0; b < d; ++b) {
        const Cplx z = std::conj(pm[b]) * py[b];
        s_det += ps[b] * z;
        pw[b] += z.imag();
      }
    } else {
      for (Eigen::Index b = 0; b < d; ++b) s_det += ps[b] * (std::conj(pm[b]) * py[b]);
    }
  }
  const Cplx eip = std::exp(Cplx(0.0, phase));
  const Cplx ein = std::conj(eip);
  g.amp += kNsToUs * (0.5 * (eip * s_up + ein * s_dn)).imag();
  g.phase += kNsToUs * (Cplx(0.0, 0.5 * amp) * (eip * s_up - ein * s_dn)).imag();
  g.det += kNsToUs * s_det.imag();
}

struct AdjointWorkspace {
  CMat mu;
  std::array<CMat, 6> nu;
};

inline void adjoint_substep(const HamiltonianProgram& prog, int k, const SubstepStages& st,
                            Solver method, CMat& lambda, SampleGrads& g,
                            Eigen::VectorXd* wpos, AdjointWorkspace& ws) {
  const double amp = prog.drive.amp[k];
  const double det = prog.drive.det[k];
  const double ph = prog.drive.phase[k];
  const Cplx adj(0.0, +kNsToUs);  // (-i kappa H)^dagger = +i kappa H
  auto fadj = [&](const CMat& in, CMat& out) { apply_scaled(prog, amp, det, ph, adj, in, out); };
  const double h = st.h;

  if (method == Solver::dp5_adaptive) {
    ws.mu = (h * kB6) * lambda;
    accumulate_stage_dots(prog, amp, ph, ws.mu, st.y[5], g, wpos);
    fadj(ws.mu, ws.nu[5]);
    ws.mu = h * (kB5 * lambda + kA65 * ws.nu[5]);
    accumulate_stage_dots(prog, amp, ph, ws.mu, st.y[4], g, wpos);
    fadj(ws.mu, ws.nu[4]);
    ws.mu = h * (kB4 * lambda + kA64 * ws.nu[5] + kA54 * ws.nu[4]);
    accumulate_stage_dots(prog, amp, ph, ws.mu, st.y[3], g, wpos);
    fadj(ws.mu, ws.nu[3]);
    ws.mu = h * (kB3 * lambda + kA63 * ws.nu[5] + kA53 * ws.nu[4] + kA43 * ws.nu[3]);
    accumulate_stage_dots(prog, amp, ph, ws.mu, st.y[2], g, wpos);
    fadj(ws.mu, ws.nu[2]);
    ws.mu = h * (kA62 * ws.nu[5] + kA52 * ws.nu[4] + kA42 * ws.nu[3] + kA32 * ws.nu[2]);
    accumulate_stage_dots(prog, amp, ph, ws.mu, st.y[1], g, wpos);
    fadj(ws.mu, ws.nu[1]);
    ws.mu = h * (kB1 * lambda + kA61 * ws.nu[5] + kA51 * ws.nu[4] + kA41 * ws.nu[3] +
                 kA31 * ws.nu[2] + kA21 * ws.nu[1]);
    accumulate_stage_dots(prog, amp, ph, ws.mu, st.y[0], g, wpos);
    fadj(ws.mu, ws.nu[0]);
    lambda += ws.nu[0] + ws.nu[1] + ws.nu[2] + ws.nu[3] + ws.nu[4] + ws.nu[5];
  } else {
    ws.mu = (h * kR4) * lambda;
    accumulate_stage_dots(prog, amp, ph, ws.mu, st.y[3], g, wpos);
    fadj(ws.mu, ws.nu[3]);
    ws.mu = h * (kR3 * lambda + 1.0 * ws.nu[3]);
    accumulate_stage_dots(prog, amp, ph, ws.mu, st.y[2], g, wpos);
    fadj(ws.mu, ws.nu[2]);
    ws.mu = h * (kR2 * lambda + 0.5 * ws.nu[2]);
    accumulate_stage_dots(prog, amp, ph, ws.mu, st.y[1], g, wpos);
    fadj(ws.mu, ws.nu[1]);
    ws.mu = h * (kR1 * lambda + 0.5 * ws.nu[1]);
    accumulate_stage_dots(prog, amp, ph, ws.mu, st.y[0], g, wpos);
    fadj(ws.mu, ws.nu[0]);
    lambda += ws.nu[0] + ws.nu[1] + ws.nu[2] + ws.nu[3];
  }
}

struct AdjointResult {
  Eigen::VectorXd g_amp, g_det, g_phase;  // per 1 ns sample
  Eigen::VectorXd w;                      // per basis state; empty unless requested
};

inline AdjointResult adjoint_backward(const HamiltonianProgram& prog,
                                      const ForwardRecord& rec, const SolverOptions& opt,
                                      const CMat& loss_grad, bool need_pos) {
  const int total = prog.duration_ns();
  AdjointResult out;
  out.g_amp = Eigen::VectorXd::Zero(total);
  out.g_det = Eigen::VectorXd::Zero(total);
  out.g_phase = Eigen::VectorXd::Zero(total);
  if (need_pos) out.w = Eigen::VectorXd::Zero(prog.dim());
  Eigen::VectorXd* wpos = need_pos ? &out.w : nullptr;

  CMat lambda = loss_grad;
  StepWorkspace ws;
  AdjointWorkspace aws;
  std::vector<CMat> starts;
  std::vector<SubstepStages> stages;
  const int nseg = (total + rec.interval - 1) / rec.interval;
  for (int seg = nseg - 1; seg >= 0; --seg) {
    const int k0 = seg * rec.interval;
    const int k1 = std::min(total, k0 + rec.interval);
    starts.assign(1, rec.checkpoints[static_cast<std::size_t>(seg)]);
    CMat y = starts[0];
    for (int k = k0; k < k1 - 1; ++k) {
      replay_sample(prog, k, y, rec.substeps[k], opt.method, nullptr, ws);
      starts.push_back(y);
    }
    for (int k = k1 - 1; k >= k0; --k) {
      CMat ystart = starts[static_cast<std::size_t>(k - k0)];
      stages.clear();
      replay_sample(prog, k, ystart, rec.substeps[k], opt.method, &stages, ws);
      SampleGrads g;
      for (int s = static_cast<int>(stages.size()) - 1; s >= 0; --s)
        adjoint_substep(prog, k, stages[static_cast<std::size_t>(s)], opt.method, lambda, g,
                        wpos, aws);
      out.g_amp[k] = g.amp;
      out.g_det[k] = g.det;
      out.g_phase[k] = g.phase;
    }
  }
  return out;
}

}  // namespace detail

}  // namespace rydopt

// ---------------------------------------------------------------------------
// Tape-recorded propagation and losses.

namespace rydopt::ad {

// Propagates `initial` under the drive and register, recording a node whose
// reverse sweep runs the discrete adjoint over the frozen forward substeps.
// Atom coordinates are taken from a "pos_<atom>" 2-vector parameter when one
// exists (trainable ones receive gradients); otherwise from the register.
inline Var propagate_op(Tape& t, LeafMap& leaves, const Register& reg,
                        const DeviceSpec& dev, const DriveVars& drive, const CMat& initial,
                        const SolverOptions& opt = {}) {
  const ParameterSet& params = leaves.params();
  Register resolved;
  std::vector<int> pos_leaf(static_cast<std::size_t>(reg.n()), -1);
  for (int i = 0; i < reg.n(); ++i) {
    const Atom& a = reg.atoms()[i];
    double x = a.x, y = a.y;
    const std::string pname = "pos_" + a.name;
    if (params.contains(pname)) {
      const Param& p = params.at(pname);
      detail::require(p.value.size() == 2,
                      "'" + pname + "' must be a 2-vector (x_um, y_um)");
      x = p.value[0];
      y = p.value[1];
      Var pv = leaves.get(pname);
      if (p.trainable) pos_leaf[static_cast<std::size_t>(i)] = pv.id;
    }
    resolved.add(a.name, x, y, a.trainable);
  }
  resolved.validate();

  DiscretizedDrive dd;
  dd.amp = drive.amp.real();
  dd.det = drive.det.real();
  dd.phase = drive.phase.real();
  HamiltonianProgram prog = build_hamiltonian_program(resolved, dev, dd);
  ForwardRecord rec = propagate_recorded(prog, initial, opt);
  CMat final_state = rec.final_state;

  struct PairChain {
    int i, j;
    int leaf_i, leaf_j;  // -1 when that endpoint is not trainable
    double u, dx, dy, r2;
  };
  std::vector<PairChain> chains;
  for (const auto& p : interaction_pairs(resolved, dev)) {
    const int li = pos_leaf[static_cast<std::size_t>(p.i)];
    const int lj = pos_leaf[static_cast<std::size_t>(p.j)];
    if (li < 0 && lj < 0) continue;
    const Atom& ai = resolved.atoms()[p.i];
    const Atom& aj = resolved.atoms()[p.j];
    const double dx = ai.x - aj.x;
    const double dy = ai.y - aj.y;
    chains.push_back({p.i, p.j, li, lj, p.strength, dx, dy, dx * dx + dy * dy});
  }

  std::vector<int> parents{drive.amp.id, drive.det.id, drive.phase.id};
  for (int id : pos_leaf)
    if (id >= 0) parents.push_back(id);

  const int aid = drive.amp.id, did = drive.det.id, pid = drive.phase.id;
  return t.push(
      Value{std::move(final_state)}, std::move(parents),
      [prog = std::move(prog), rec = std::move(rec), opt, aid, did, pid,
       chains = std::move(chains)](Tape& tp, int self) {
        bool need_pos = false;
        for (const auto& ch : chains)
          need_pos = need_pos || (ch.leaf_i >= 0 && tp.needs(ch.leaf_i)) ||
                     (ch.leaf_j >= 0 && tp.needs(ch.leaf_j));
        const CMat& g = tp.grad_cplx(self);
        detail::AdjointResult ar = detail::adjoint_backward(prog, rec, opt, g, need_pos);
        if (tp.needs(aid)) tp.grad_real(aid) += ar.g_amp;
        if (tp.needs(did)) tp.grad_real(did) += ar.g_det;
        if (tp.needs(pid)) tp.grad_real(pid) += ar.g_phase;
        if (!need_pos) return;
        for (const auto& ch : chains) {
          const Eigen::Index mask =
              (Eigen::Index(1) << ch.i) | (Eigen::Index(1) << ch.j);
          double wsum = 0.0;
          for (Eigen::Index b = 0; b < ar.w.size(); ++b)
            if ((b & mask) == mask) wsum += ar.w[b];
          const double gu = kNsToUs * wsum;  // dL/dU_ij
          // U = C6 r^-6: dU/dx_i = -6 U (x_i - x_j) / r^2, antisymmetric in i<->j.
          const double gx = gu * (-6.0 * ch.u * ch.dx / ch.r2);
          const double gy = gu * (-6.0 * ch.u * ch.dy / ch.r2);
          if (ch.leaf_i >= 0 && tp.needs(ch.leaf_i)) {
            Eigen::VectorXd& gi = tp.grad_real(ch.leaf_i);
            gi[0] += gx;
            gi[1] += gy;
          }
          if (ch.leaf_j >= 0 && tp.needs(ch.leaf_j)) {
            Eigen::VectorXd& gj = tp.grad_real(ch.leaf_j);
            gj[0] -= gx;
            gj[1] -= gy;
          }
        }
      });
}

// F = |Tr(U_sim^dag U_target)| / 2^N.
inline Var unitary_fidelity_op(Tape& t, Var u_sim, const CMat& u_target) {
  const CMat& u = u_sim.cplx();
  detail::require(u.rows() == u.cols(), "u_sim must be square");
  detail::require(u.rows() == u_target.rows() && u.cols() == u_target.cols(),
                  "unitary dimension mismatch");
  const Cplx tr = u.conjugate().cwiseProduct(u_target).sum();
  const double dscale = static_cast<double>(u.rows());
  RealVec out(1);
  out[0] = std::abs(tr) / dscale;
  const int uid = u_sim.id;
  return t.push(Value{std::move(out)}, {uid},
                [uid, tr, dscale, u_target](Tape& tp, int self) {
                  const double gf = tp.grad_real(self)[0];
                  const double mag = std::abs(tr);
                  if (mag < 1e-300) return;  // |.| kink; take the zero subgradient
                  tp.grad_cplx(uid) += (gf * std::conj(tr) / (dscale * mag)) * u_target;
                });
}

// F = |<psi|target>|^2.
inline Var state_fidelity_op(Tape& t, Var psi, const CVec& target) {
  const CMat& p = psi.cplx();
  detail::require(p.cols() == 1, "state_fidelity_op expects a single state column");
  detail::require(p.rows() == target.size(), "state dimension mismatch");
  const Cplx c = p.col(0).dot(target);  // conj(psi) . target
  RealVec out(1);
  out[0] = std::norm(c);
  const int pid = psi.id;
  return t.push(Value{std::move(out)}, {pid}, [pid, c, target](Tape& tp, int self) {
    const double gf = tp.grad_real(self)[0];
    tp.grad_cplx(pid).col(0) += (2.0 * gf * std::conj(c)) * target;
  });
}

// <psi|C|psi> for Hermitian C.
inline Var expectation_op(Tape& t, Var psi, const CMat& observable) {
  const CMat& p = psi.cplx();
  detail::require(p.cols() == 1, "expectation_op expects a single state column");
  detail::require(observable.rows() == observable.cols(), "observable must be square");
  detail::require(p.rows() == observable.rows(), "state/observable dimension mismatch");
  detail::require((observable - observable.adjoint()).cwiseAbs().maxCoeff() <= 1e-10,
                  "observable is not Hermitian");
  const CVec cpsi = observable * p.col(0);
  const Cplx e = p.col(0).dot(cpsi);
  detail::require(std::abs(e.imag()) <= 1e-10, "expectation has an imaginary residual");
  RealVec out(1);
  out[0] = e.real();
  const int pid = psi.id;
  return t.push(Value{std::move(out)}, {pid}, [pid, cpsi](Tape& tp, int self) {
    const double ge = tp.grad_real(self)[0];
    tp.grad_cplx(pid).col(0) += (2.0 * ge) * cpsi;
  });
}

// Squared Frobenius norm of a complex node (parameter-independent under exact
// unitarity; useful as a consistency probe of the adjoint itself).
inline Var norm_sq_op(Tape& t, Var z) {
  const CMat& m = z.cplx();
  RealVec out(1);
  out[0] = m.squaredNorm();
  const int zid = z.id;
  return t.push(Value{std::move(out)}, {zid}, [zid](Tape& tp, int self) {
    const double g = tp.grad_real(self)[0];
    tp.grad_cplx(zid) += (2.0 * g) * tp.cplx(zid);
  });
}

}  // namespace rydopt::ad
