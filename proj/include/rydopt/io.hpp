#pragma once
// Configuration files, run artifacts, and report writers: a strict INI
// dialect with unit-suffixed keys, a canonical serialization with an FNV-1a
// hash for manifests, JSONL epoch logs, and CSV exports.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rydopt/autograd.hpp"
#include "rydopt/core.hpp"
#include "rydopt/dynamics.hpp"
#include "rydopt/experiments.hpp"
#include "rydopt/optimize.hpp"
#include "rydopt/waveforms.hpp"

#define RYDOPT_VERSION "0.1.0"

namespace rydopt::io {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// INI configuration. Sections and keys stay sorted, so serialization is
// canonical and hashable.

struct ConfigDoc {
  std::map<std::string, std::map<std::string, std::string>> sections;

  bool has(const std::string& section, const std::string& key) const {
    auto s = sections.find(section);
    return s != sections.end() && s->second.count(key) > 0;
  }

  const std::string& get(const std::string& section, const std::string& key) const {
    auto s = sections.find(section);
    detail::require(s != sections.end(), "missing section [" + section + "]");
    auto k = s->second.find(key);
    detail::require(k != s->second.end(),
                    "missing key '" + key + "' in section [" + section + "]");
    return k->second;
  }

  ConfigDoc& set(const std::string& section, const std::string& key, std::string value) {
    sections[section][key] = std::move(value);
    return *this;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const ConfigDoc& doc, const std::string& section,
                           const std::string& key) {
  const std::string& raw = doc.get(section, key);
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(raw, &pos);
  } catch (const std::exception&) {
    rydopt::detail::fail("key '" + key + "' in [" + section + "]: '" + raw +
                         "' is not a number");
  }
  rydopt::detail::require(pos == raw.size(), "key '" + key + "' in [" + section +
                                                 "]: trailing characters in '" + raw + "'");
  return v;
}

inline long parse_int(const ConfigDoc& doc, const std::string& section,
                      const std::string& key) {
  const std::string& raw = doc.get(section, key);
  std::size_t pos = 0;
  long v = 0;
  try {
    v = std::stol(raw, &pos);
  } catch (const std::exception&) {
    rydopt::detail::fail("key '" + key + "' in [" + section + "]: '" + raw +
                         "' is not an integer");
  }
  rydopt::detail::require(pos == raw.size(), "key '" + key + "' in [" + section +
                                                 "]: trailing characters in '" + raw + "'");
  return v;
}

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace detail

// Lines: blank, full-line comments (# or ;), [section], key = value. Keys
// outside a section and duplicate keys are errors.
inline ConfigDoc parse_ini(const std::string& text) {
  ConfigDoc doc;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      rydopt::detail::require(t.back() == ']',
                              "line " + std::to_string(lineno) + ": unterminated section");
      section = detail::trim(t.substr(1, t.size() - 2));
      rydopt::detail::require(!section.empty(),
                              "line " + std::to_string(lineno) + ": empty section name");
      doc.sections[section];
      continue;
    }
    const auto eq = t.find('=');
    rydopt::detail::require(eq != std::string::npos,
                            "line " + std::to_string(lineno) + ": expected key = value");
    rydopt::detail::require(!section.empty(),
                            "line " + std::to_string(lineno) + ": key outside of a section");
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));
    rydopt::detail::require(!key.empty(), "line " + std::to_string(lineno) + ": empty key");
    rydopt::detail::require(doc.sections[section].count(key) == 0,
                            "duplicate key '" + key + "' in section [" + section + "]");
    doc.sections[section][key] = value;
  }
  return doc;
}

inline ConfigDoc parse_ini_file(const std::string& path) {
  std::ifstream in(path);
  rydopt::detail::require(in.good(), "cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_ini(buf.str());
}

inline std::string serialize_canonical(const ConfigDoc& doc) {
  std::ostringstream os;
  for (const auto& [section, entries] : doc.sections) {
    os << '[' << section << "]\n";
    for (const auto& [key, value] : entries) os << key << '=' << value << '\n';
  }
  return os.str();
}

inline std::uint64_t fnv1a64(const std::string& data) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string config_hash(const ConfigDoc& doc) {
  std::ostringstream os;
  os << std::hex << std::setfill('0') << std::setw(16) << fnv1a64(serialize_canonical(doc));
  return os.str();
}

// ---------------------------------------------------------------------------
// ExperimentConfig <-> ConfigDoc. Numeric keys carry their unit as a suffix.

inline ExperimentConfig experiment_config_from_doc(const ConfigDoc& doc) {
  static const std::map<std::string, std::vector<std::string>> known = {
      {"experiment",
       {"kind", "n_qubits", "layout", "spacing_um", "rows", "cols", "n_pulses",
        "pulse_duration_ns", "duration_ns", "n_controls", "gamma", "target_basis", "seed"}},
      {"device", {"omega_max_rad_us", "abs_detuning_max_rad_us"}},
      {"optimizer", {"epochs", "lr", "eta_min", "t_max"}},
      {"solver", {"method", "atol", "rtol", "rk4_substeps", "phase_cap", "checkpoint_every"}},
  };
  for (const auto& [section, entries] : doc.sections) {
    auto k = known.find(section);
    rydopt::detail::require(k != known.end(), "unknown section [" + section + "]");
    for (const auto& [key, value] : entries) {
      (void)value;
      bool found = false;
      for (const auto& allowed : k->second) found = found || allowed == key;
      rydopt::detail::require(found, "unknown key '" + key + "' in section [" + section + "]");
    }
  }

  rydopt::detail::require(doc.has("experiment", "kind"),
                          "missing key 'kind' in section [experiment]");
  ExperimentConfig cfg =
      default_config(experiment_kind_from_string(doc.get("experiment", "kind")),
                     doc.has("experiment", "n_qubits")
                         ? static_cast<int>(detail::parse_int(doc, "experiment", "n_qubits"))
                         : 2);
  const std::string ex = "experiment";
  if (doc.has(ex, "layout")) cfg.layout = layout_from_string(doc.get(ex, "layout"));
  if (doc.has(ex, "spacing_um")) cfg.spacing_um = detail::parse_double(doc, ex, "spacing_um");
  if (doc.has(ex, "rows")) cfg.rows = static_cast<int>(detail::parse_int(doc, ex, "rows"));
  if (doc.has(ex, "cols")) cfg.cols = static_cast<int>(detail::parse_int(doc, ex, "cols"));
  if (doc.has(ex, "n_pulses"))
    cfg.n_pulses = static_cast<int>(detail::parse_int(doc, ex, "n_pulses"));
  if (doc.has(ex, "pulse_duration_ns"))
    cfg.pulse_duration_ns = detail::parse_double(doc, ex, "pulse_duration_ns");
  if (doc.has(ex, "duration_ns"))
    cfg.duration_ns = detail::parse_double(doc, ex, "duration_ns");
  if (doc.has(ex, "n_controls"))
    cfg.n_controls = static_cast<int>(detail::parse_int(doc, ex, "n_controls"));
  if (doc.has(ex, "gamma")) cfg.gamma = detail::parse_double(doc, ex, "gamma");
  if (doc.has(ex, "target_basis")) cfg.target_basis = doc.get(ex, "target_basis");
  if (doc.has(ex, "seed"))
    cfg.seed = static_cast<std::uint64_t>(detail::parse_int(doc, ex, "seed"));

  if (doc.has("device", "omega_max_rad_us"))
    cfg.omega_max = detail::parse_double(doc, "device", "omega_max_rad_us");
  if (doc.has("device", "abs_detuning_max_rad_us"))
    cfg.abs_detuning_max = detail::parse_double(doc, "device", "abs_detuning_max_rad_us");

  if (doc.has("optimizer", "epochs"))
    cfg.epochs = static_cast<int>(detail::parse_int(doc, "optimizer", "epochs"));
  if (doc.has("optimizer", "lr")) cfg.lr = detail::parse_double(doc, "optimizer", "lr");
  if (doc.has("optimizer", "eta_min"))
    cfg.eta_min = detail::parse_double(doc, "optimizer", "eta_min");
  if (doc.has("optimizer", "t_max"))
    cfg.t_max = static_cast<int>(detail::parse_int(doc, "optimizer", "t_max"));

  if (doc.has("solver", "method"))
    cfg.solver.method = solver_from_string(doc.get("solver", "method"));
  if (doc.has("solver", "atol")) cfg.solver.atol = detail::parse_double(doc, "solver", "atol");
  if (doc.has("solver", "rtol")) cfg.solver.rtol = detail::parse_double(doc, "solver", "rtol");
  if (doc.has("solver", "rk4_substeps"))
    cfg.solver.rk4_substeps = static_cast<int>(detail::parse_int(doc, "solver", "rk4_substeps"));
  if (doc.has("solver", "phase_cap"))
    cfg.solver.phase_cap = detail::parse_double(doc, "solver", "phase_cap");
  if (doc.has("solver", "checkpoint_every"))
    cfg.solver.checkpoint_every =
        static_cast<int>(detail::parse_int(doc, "solver", "checkpoint_every"));
  return cfg;
}

inline ConfigDoc to_doc(const ExperimentConfig& cfg) {
  ConfigDoc doc;
  doc.set("experiment", "kind", experiment_kind_to_string(cfg.kind));
  doc.set("experiment", "n_qubits", std::to_string(cfg.n_qubits));
  doc.set("experiment", "layout", layout_to_string(cfg.layout));
  doc.set("experiment", "spacing_um", detail::fmt_double(cfg.spacing_um));
  if (cfg.rows > 0) doc.set("experiment", "rows", std::to_string(cfg.rows));
  if (cfg.cols > 0) doc.set("experiment", "cols", std::to_string(cfg.cols));
  if (cfg.kind == ExperimentKind::gate_const) {
    doc.set("experiment", "n_pulses", std::to_string(cfg.n_pulses));
    doc.set("experiment", "pulse_duration_ns", detail::fmt_double(cfg.pulse_duration_ns));
  } else {
    doc.set("experiment", "duration_ns", detail::fmt_double(cfg.duration_ns));
    doc.set("experiment", "n_controls", std::to_string(cfg.n_controls));
    doc.set("experiment", "gamma", detail::fmt_double(cfg.gamma));
    doc.set("experiment", "seed", std::to_string(cfg.seed));
  }
  if (!cfg.target_basis.empty()) doc.set("experiment", "target_basis", cfg.target_basis);
  doc.set("device", "omega_max_rad_us", detail::fmt_double(cfg.omega_max));
  doc.set("device", "abs_detuning_max_rad_us", detail::fmt_double(cfg.abs_detuning_max));
  doc.set("optimizer", "epochs", std::to_string(cfg.epochs));
  doc.set("optimizer", "lr", detail::fmt_double(cfg.lr));
  doc.set("optimizer", "eta_min", detail::fmt_double(cfg.eta_min));
  doc.set("optimizer", "t_max", std::to_string(cfg.t_max));
  doc.set("solver", "method", solver_to_string(cfg.solver.method));
  return doc;
}

// ---------------------------------------------------------------------------
// JSON artifacts.

inline json params_to_json(const ParamSnapshot& snap) {
  json j = json::object();
  for (const auto& [name, value] : snap) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < value.size(); ++i) arr.push_back(value[i]);
    j[name] = std::move(arr);
  }
  return j;
}

inline json epoch_record_to_json(const EpochRecord& rec) {
  return json{{"epoch", rec.epoch},
              {"loss", rec.loss},
              {"lr", rec.lr},
              {"params", params_to_json(rec.params)}};
}

namespace detail {

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  rydopt::detail::require(out.good(), "cannot open output file '" + path + "'");
  return out;
}

}  // namespace detail

inline void write_runlog_jsonl(const std::string& path, const RunLog& log) {
  auto out = detail::open_out(path);
  for (const auto& rec : log.records) out << epoch_record_to_json(rec).dump() << '\n';
}

inline void write_best_params_json(const std::string& path, const RunLog& log) {
  auto out = detail::open_out(path);
  json j{{"best_epoch", log.records[log.best_index()].epoch},
         {"best_loss", log.best_loss()},
         {"best_fidelity", 1.0 - log.best_loss()},
         {"params", params_to_json(log.best_params())}};
  out << j.dump(2) << '\n';
}

struct RunManifest {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string started_at_utc;
  std::string finished_at_utc;
  std::map<std::string, std::string> outputs;  // artifact name -> path
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

inline void write_manifest_json(const std::string& path, const RunManifest& m) {
  auto out = detail::open_out(path);
  json outputs = json::object();
  for (const auto& [name, p] : m.outputs) outputs[name] = p;
  json j{{"version", RYDOPT_VERSION}, {"command", m.command},
         {"config_hash", m.config_hash}, {"seed", m.seed},
         {"started_at_utc", m.started_at_utc}, {"finished_at_utc", m.finished_at_utc},
         {"outputs", outputs}};
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// CSV reports.

inline void write_drive_csv(const std::string& path, const DiscretizedDrive& drive) {
  auto out = detail::open_out(path);
  out << "t_ns,amp_rad_us,det_rad_us,phase_rad\n";
  for (Eigen::Index k = 0; k < drive.amp.size(); ++k)
    out << k << ',' << detail::fmt_double(drive.amp[k]) << ','
        << detail::fmt_double(drive.det[k]) << ',' << detail::fmt_double(drive.phase[k])
        << '\n';
}

// One probability column per basis state, labeled by bitstring (character j
// is qubit j).
inline void write_trajectory_csv(const std::string& path, const Trajectory& traj,
                                 int n_qubits) {
  rydopt::detail::require(!traj.states.empty(), "empty trajectory");
  rydopt::detail::require(traj.states.front().cols() == 1,
                          "trajectory CSV needs single-column states");
  const Eigen::Index dim = traj.states.front().rows();
  rydopt::detail::require(dim == (Eigen::Index{1} << n_qubits),
                          "trajectory dimension does not match qubit count");
  auto out = detail::open_out(path);
  out << "t_ns";
  for (Eigen::Index b = 0; b < dim; ++b) {
    std::string bits(n_qubits, '0');
    for (int j = 0; j < n_qubits; ++j)
      if (b & (Eigen::Index{1} << j)) bits[j] = '1';
    out << ",p_" << bits;
  }
  out << '\n';
  for (std::size_t k = 0; k < traj.times.size(); ++k) {
    out << detail::fmt_double(traj.times[k]);
    for (Eigen::Index b = 0; b < dim; ++b)
      out << ',' << detail::fmt_double(std::norm(traj.states[k](b, 0)));
    out << '\n';
  }
}

inline void write_gradcheck_csv(const std::string& path, const ad::GradCheckReport& report) {
  auto out = detail::open_out(path);
  out << "param,component,analytic,numeric,rel_err\n";
  for (const auto& row : report.rows)
    out << row.param << ',' << row.component << ',' << detail::fmt_double(row.analytic)
        << ',' << detail::fmt_double(row.numeric) << ',' << detail::fmt_double(row.rel_err)
        << '\n';
}

inline void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  auto out = detail::open_out(path);
  out << "label,kind,n_qubits,layout,spacing_um,best_fidelity_pct,reference_pct,"
         "seed_fidelities_pct,failed,error\n";
  for (const auto& row : rows) {
    out << row.label << ',' << experiment_kind_to_string(row.cfg.kind) << ','
        << row.cfg.n_qubits << ',' << layout_to_string(row.cfg.layout) << ','
        << detail::fmt_double(row.cfg.spacing_um) << ','
        << detail::fmt_double(row.best_fidelity_pct) << ','
        << detail::fmt_double(row.reference_pct) << ',';
    for (std::size_t i = 0; i < row.seed_fidelities_pct.size(); ++i) {
      if (i) out << ';';
      out << detail::fmt_double(row.seed_fidelities_pct[i]);
    }
    out << ',' << (row.failed ? "true" : "false") << ',';
    std::string err = row.error;
    for (auto& c : err)
      if (c == ',' || c == '\n') c = ' ';
    out << err << '\n';
  }
}

}  // namespace rydopt::io
