#pragma once
// Domain types shared by the whole library: atom registers, device limits and
// the named-parameter registry that samplers, solvers and optimizers consume.
//
// Unit conventions (fixed project-wide):
//   - drive amplitudes and detunings in rad/us,
//   - times and durations on a 1 ns grid (internally converted with 1e-3),
//   - distances in um, C6 in rad*um^6/us, hbar = 1.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace rydopt {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kNsToUs = 1e-3;
// C6 for the Rb 60S Rydberg level; configurable through DeviceSpec.
inline constexpr double kDefaultC6 = 865723.02;

namespace detail {

[[noreturn]] inline void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// ParameterSet: named scalars/vectors with trainability flags and optional
// componentwise box constraints. Scalars are stored as size-1 vectors.

struct Param {
  Eigen::VectorXd value;
  bool trainable = false;
  std::optional<std::array<double, 2>> box;  // [min, max], applied componentwise
};

class ParameterSet {
 public:
  ParameterSet& set(const std::string& name, const Eigen::VectorXd& value,
                    bool trainable = false,
                    std::optional<std::array<double, 2>> box = std::nullopt) {
    detail::require(!name.empty(), "parameter name must be non-empty");
    if (box) detail::require((*box)[0] <= (*box)[1],
                             "parameter '" + name + "': constraint with min > max");
    auto it = index_.find(name);
    if (it == index_.end()) {
      index_.emplace(name, order_.size());
      order_.push_back(name);
      store_.push_back(Param{value, trainable, box});
    } else {
      store_[it->second] = Param{value, trainable, box};
    }
    return *this;
  }

  ParameterSet& set_scalar(const std::string& name, double value,
                           bool trainable = false,
                           std::optional<std::array<double, 2>> box = std::nullopt) {
    Eigen::VectorXd v(1);
    v[0] = value;
    return set(name, v, trainable, box);
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const Param& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) detail::fail("unresolved parameter name '" + name + "'");
    return store_[it->second];
  }

  Param& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) detail::fail("unresolved parameter name '" + name + "'");
    return store_[it->second];
  }

  double scalar(const std::string& name) const {
    const Param& p = at(name);
    detail::require(p.value.size() == 1,
                    "parameter '" + name + "' is not a scalar");
    return p.value[0];
  }

  // Names in insertion order; iteration over this list is the deterministic
  // ordering contract relied on by the optimizer and serializers.
  const std::vector<std::string>& names() const { return order_; }

  std::vector<std::string> trainable_names() const {
    std::vector<std::string> out;
    for (const auto& n : order_)
      if (at(n).trainable) out.push_back(n);
    return out;
  }

  std::size_t size() const { return order_.size(); }

 private:
  std::vector<std::string> order_;
  std::vector<Param> store_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Projects every constrained entry onto its [min, max] box. Idempotent;
// trainability flags and unconstrained entries are untouched.
inline ParameterSet clamp_to_constraints(const ParameterSet& params) {
  ParameterSet out = params;
  for (const auto& name : out.names()) {
    Param& p = out.at(name);
    if (!p.box) continue;
    const double lo = (*p.box)[0], hi = (*p.box)[1];
    for (Eigen::Index i = 0; i < p.value.size(); ++i)
      p.value[i] = std::clamp(p.value[i], lo, hi);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Register: planar atom layout. Distances in um set every interaction strength.

struct Atom {
  std::string name;
  double x = 0.0;  // um
  double y = 0.0;  // um
  bool trainable = false;  // both coordinates optimizable when set
};

class Register {
 public:
  Register() = default;

  Register& add(const std::string& name, double x, double y, bool trainable = false) {
    for (const auto& a : atoms_)
      detail::require(a.name != name, "duplicate atom name '" + name + "'");
    atoms_.push_back(Atom{name, x, y, trainable});
    return *this;
  }

  const std::vector<Atom>& atoms() const { return atoms_; }
  int n() const { return static_cast<int>(atoms_.size()); }

  void validate() const {
    detail::require(!atoms_.empty(), "register needs at least 1 atom");
    for (std::size_t i = 0; i < atoms_.size(); ++i)
      for (std::size_t j = i + 1; j < atoms_.size(); ++j) {
        const double dx = atoms_[i].x - atoms_[j].x;
        const double dy = atoms_[i].y - atoms_[j].y;
        detail::require(dx * dx + dy * dy > 0.0,
                        "coincident atoms '" + atoms_[i].name + "' and '" +
                            atoms_[j].name + "'");
      }
  }

 private:
  std::vector<Atom> atoms_;
};

enum class Layout { linear, rectangular, triangular };

inline Layout layout_from_string(const std::string& s) {
  if (s == "linear") return Layout::linear;
  if (s == "rectangular" || s == "rect") return Layout::rectangular;
  if (s == "triangular" || s == "triangle") return Layout::triangular;
  detail::fail("unknown layout '" + s + "'");
}

inline std::string layout_to_string(Layout l) {
  switch (l) {
    case Layout::linear: return "linear";
    case Layout::rectangular: return "rectangular";
    case Layout::triangular: return "triangular";
  }
  return "linear";
}

// Canonical coordinates for the supported layouts. Atoms are named q0..q{n-1}.
//   linear:      (k*spacing, 0)
//   rectangular: row-major grid, rows*cols must equal n_atoms
//   triangular:  triangular lattice (row offset spacing/2, pitch spacing*sqrt(3)/2),
//                filled row-major with width ceil(sqrt(n)); every nearest-neighbor
//                distance equals the lattice constant.
inline Register build_register(Layout layout, double spacing_um, int n_atoms,
                               int rows = 0, int cols = 0) {
  detail::require(n_atoms >= 1, "n_atoms must be >= 1");
  detail::require(spacing_um > 0.0, "spacing must be positive");
  Register reg;
  switch (layout) {
    case Layout::linear: {
      for (int k = 0; k < n_atoms; ++k)
        reg.add("q" + std::to_string(k), k * spacing_um, 0.0);
      break;
    }
    case Layout::rectangular: {
      detail::require(rows >= 1 && cols >= 1 && rows * cols == n_atoms,
                      "rectangular shape mismatch: rows*cols != n_atoms");
      int k = 0;
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c, ++k)
          reg.add("q" + std::to_string(k), c * spacing_um, r * spacing_um);
      break;
    }
    case Layout::triangular: {
      const int width = std::max(1, static_cast<int>(std::ceil(std::sqrt(
                                        static_cast<double>(n_atoms)))));
      const double dy = spacing_um * std::sqrt(3.0) / 2.0;
      for (int k = 0; k < n_atoms; ++k) {
        const int r = k / width, c = k % width;
        const double xoff = (r % 2 == 0) ? 0.0 : spacing_um / 2.0;
        reg.add("q" + std::to_string(k), c * spacing_um + xoff, r * dy);
      }
      break;
    }
  }
  reg.validate();
  return reg;
}

// Euclidean distance matrix in um: symmetric, zero diagonal.
inline Eigen::MatrixXd pairwise_distances(const Register& reg) {
  reg.validate();
  const int n = reg.n();
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double dx = reg.atoms()[i].x - reg.atoms()[j].x;
      const double dy = reg.atoms()[i].y - reg.atoms()[j].y;
      d(i, j) = d(j, i) = std::hypot(dx, dy);
    }
  return d;
}

// ---------------------------------------------------------------------------
// DeviceSpec: hardware limits entering constraints and the interaction term.

struct DeviceSpec {
  double max_amp = 4.0 * kPi;           // Omega_max, rad/us
  double max_abs_detuning = 4.0 * kPi;  // |delta_max|, rad/us
  double c6 = kDefaultC6;               // rad*um^6/us
  double min_atom_distance = 4.0;       // um
  int sample_dt = 1;                    // ns; the whole library assumes 1

  void validate() const {
    detail::require(max_amp > 0.0, "max_amp must be positive");
    detail::require(max_abs_detuning > 0.0, "max_abs_detuning must be positive");
    detail::require(c6 > 0.0, "c6 must be positive");
    detail::require(min_atom_distance >= 0.0, "min_atom_distance must be >= 0");
    detail::require(sample_dt == 1, "sample_dt is fixed at 1 ns");
  }
};

}  // namespace rydopt
