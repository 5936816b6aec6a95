#pragma once
// Reverse-mode differentiation over a recorded list of coarse operations.
//
// Values are either real vectors (Eigen::VectorXd; scalars are size-1) or
// complex matrices (Eigen::MatrixXcd; state vectors are single columns).
// Cotangent convention: for a real node x the buffer g satisfies dL = g.dot(dx);
// for a complex node Z the buffer G satisfies dL = Re(sum conj(G) .* dZ).
// Losses are real scalars by construction, so the seed is simply 1.
//
// A tape is single-use: record a forward pass, call backward() once, read the
// leaf gradients. Higher-order derivatives are out of scope and rejected.

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "rydopt/core.hpp"

namespace rydopt::ad {

using RealVec = Eigen::VectorXd;
using CplxMat = Eigen::MatrixXcd;
using Value = std::variant<RealVec, CplxMat>;

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Value& value() const;
  const RealVec& real() const;
  const CplxMat& cplx() const;
  double scalar() const;
  bool requires_grad() const;
  // Leaf gradient after backward(); zero-filled if the node was never reached.
  RealVec grad() const;
};

class Tape {
 public:
  using PullFn = std::function<void(Tape&, int self)>;

  Var leaf(const RealVec& v, bool requires_grad) {
    return push_node(Value{v}, {}, nullptr, requires_grad);
  }

  Var constant(const RealVec& v) { return leaf(v, false); }

  Var constant_scalar(double v) {
    RealVec x(1);
    x[0] = v;
    return leaf(x, false);
  }

  Var constant_complex(const CplxMat& m) {
    return push_node(Value{m}, {}, nullptr, false);
  }

  // Records a node. `pull` receives the node id and must route the node's
  // cotangent into its parents' buffers; it may be null for constants.
  Var push(Value v, std::vector<int> parents, PullFn pull) {
    bool req = false;
    for (int p : parents) req = req || nodes_[static_cast<std::size_t>(p)].needs_grad;
    return push_node(std::move(v), std::move(parents), std::move(pull), req);
  }

  const Value& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).val; }

  const RealVec& real(int id) const {
    const Value& v = value(id);
    if (!std::holds_alternative<RealVec>(v))
      throw std::logic_error("tape node is not real-valued");
    return std::get<RealVec>(v);
  }

  const CplxMat& cplx(int id) const {
    const Value& v = value(id);
    if (!std::holds_alternative<CplxMat>(v))
      throw std::logic_error("tape node is not complex-valued");
    return std::get<CplxMat>(v);
  }

  bool needs(int id) const { return nodes_.at(static_cast<std::size_t>(id)).needs_grad; }

  bool has_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).grad_set; }

  // Cotangent accumulators, allocated zero-filled on first touch.
  RealVec& grad_real(int id) {
    Node& n = nodes_.at(static_cast<std::size_t>(id));
    if (!n.grad_set) {
      n.grad = Value{RealVec(RealVec::Zero(std::get<RealVec>(n.val).size()))};
      n.grad_set = true;
    }
    return std::get<RealVec>(n.grad);
  }

  CplxMat& grad_cplx(int id) {
    Node& n = nodes_.at(static_cast<std::size_t>(id));
    if (!n.grad_set) {
      const CplxMat& v = std::get<CplxMat>(n.val);
      n.grad = Value{CplxMat(CplxMat::Zero(v.rows(), v.cols()))};
      n.grad_set = true;
    }
    return std::get<CplxMat>(n.grad);
  }

  // Reverse sweep from `loss` (real scalar). Single use per tape.
  void backward(const Var& loss) {
    if (consumed_)
      throw std::logic_error("backward() already ran on this tape; record a new forward pass");
    consumed_ = true;
    if (loss.tape != this) throw std::logic_error("loss belongs to a different tape");
    const RealVec& lv = real(loss.id);
    if (lv.size() != 1) throw std::logic_error("loss must be a real scalar");
    if (!std::isfinite(lv[0])) throw std::runtime_error("loss is not finite");
    grad_real(loss.id)[0] = 1.0;
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.needs_grad || !n.grad_set || !n.pull) continue;
      n.pull(*this, id);
    }
  }

  bool consumed() const { return consumed_; }
  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Value val;
    std::vector<int> parents;
    PullFn pull;
    bool needs_grad = false;
    bool grad_set = false;
    Value grad;
  };

  Var push_node(Value v, std::vector<int> parents, PullFn pull, bool req) {
    nodes_.push_back(Node{std::move(v), std::move(parents), std::move(pull), req, false, Value{}});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

inline const Value& Var::value() const { return tape->value(id); }
inline const RealVec& Var::real() const { return tape->real(id); }
inline const CplxMat& Var::cplx() const { return tape->cplx(id); }
inline double Var::scalar() const {
  const RealVec& v = real();
  if (v.size() != 1) throw std::logic_error("node is not a scalar");
  return v[0];
}
inline bool Var::requires_grad() const { return tape->needs(id); }
inline RealVec Var::grad() const {
  if (tape->has_grad(id)) return tape->grad_real(id);
  return RealVec::Zero(real().size());
}

// ---------------------------------------------------------------------------
// Real elementwise / linear operations.

// out = x * c
inline Var scale(Tape& t, Var x, double c) {
  RealVec v = x.real() * c;
  int xid = x.id;
  return t.push(Value{std::move(v)}, {xid}, [xid, c](Tape& tp, int self) {
    tp.grad_real(xid) += c * tp.grad_real(self);
  });
}

inline Var add(Tape& t, Var a, Var b) {
  detail::require(a.real().size() == b.real().size(), "add: size mismatch");
  RealVec v = a.real() + b.real();
  int ai = a.id, bi = b.id;
  return t.push(Value{std::move(v)}, {ai, bi}, [ai, bi](Tape& tp, int self) {
    const RealVec& g = tp.grad_real(self);
    if (tp.needs(ai)) tp.grad_real(ai) += g;
    if (tp.needs(bi)) tp.grad_real(bi) += g;
  });
}

// out = c - x (elementwise)
inline Var sub_from(Tape& t, double c, Var x) {
  RealVec v = (c - x.real().array()).matrix();
  int xid = x.id;
  return t.push(Value{std::move(v)}, {xid}, [xid](Tape& tp, int self) {
    tp.grad_real(xid) -= tp.grad_real(self);
  });
}

// out = (x - target)^2, scalar in scalar out
inline Var square_error(Tape& t, Var x, double target) {
  const double v = x.scalar();
  RealVec out(1);
  out[0] = (v - target) * (v - target);
  int xid = x.id;
  return t.push(Value{std::move(out)}, {xid}, [xid, v, target](Tape& tp, int self) {
    tp.grad_real(xid)[0] += 2.0 * (v - target) * tp.grad_real(self)[0];
  });
}

// out = sum_i x_i^2, scalar
inline Var sum_squares(Tape& t, Var x) {
  RealVec out(1);
  out[0] = x.real().squaredNorm();
  int xid = x.id;
  return t.push(Value{std::move(out)}, {xid}, [xid](Tape& tp, int self) {
    const double g = tp.grad_real(self)[0];
    tp.grad_real(xid) += 2.0 * g * tp.real(xid);
  });
}

// Broadcast a scalar to an n-vector.
inline Var broadcast(Tape& t, Var x, int n) {
  detail::require(n >= 1, "broadcast: n must be >= 1");
  RealVec v = RealVec::Constant(n, x.scalar());
  int xid = x.id;
  return t.push(Value{std::move(v)}, {xid}, [xid](Tape& tp, int self) {
    tp.grad_real(xid)[0] += tp.grad_real(self).sum();
  });
}

// Linear ramp start -> stop over n samples, endpoint excluded:
// out_k = start + (stop - start) * k / n.
inline Var ramp_fill(Tape& t, Var start, Var stop, int n) {
  detail::require(n >= 1, "ramp: duration must be >= 1");
  const double s = start.scalar(), e = stop.scalar();
  RealVec v(n);
  for (int k = 0; k < n; ++k) v[k] = s + (e - s) * (static_cast<double>(k) / n);
  int si = start.id, ei = stop.id;
  return t.push(Value{std::move(v)}, {si, ei}, [si, ei, n](Tape& tp, int self) {
    const RealVec& g = tp.grad_real(self);
    double gs = 0.0, ge = 0.0;
    for (int k = 0; k < n; ++k) {
      const double w = static_cast<double>(k) / n;
      gs += g[k] * (1.0 - w);
      ge += g[k] * w;
    }
    if (tp.needs(si)) tp.grad_real(si)[0] += gs;
    if (tp.needs(ei)) tp.grad_real(ei)[0] += ge;
  });
}

// out = w * area for a fixed unit-area template w (used by shaped waveforms).
inline Var scaled_template(Tape& t, const RealVec& unit_template, Var area) {
  RealVec v = unit_template * area.scalar();
  int ai = area.id;
  auto tmpl = std::make_shared<RealVec>(unit_template);
  return t.push(Value{std::move(v)}, {ai}, [ai, tmpl](Tape& tp, int self) {
    tp.grad_real(ai)[0] += tmpl->dot(tp.grad_real(self));
  });
}

// out = bound * sigmoid(gamma * theta), elementwise; output in (0, bound).
inline Var sigmoid_bounded(Tape& t, Var theta, double bound, double gamma) {
  detail::require(bound > 0.0 && gamma > 0.0, "sigmoid transform: bound and gamma must be positive");
  const RealVec& th = theta.real();
  RealVec v(th.size());
  for (Eigen::Index i = 0; i < th.size(); ++i)
    v[i] = bound / (1.0 + std::exp(-gamma * th[i]));
  int ti = theta.id;
  return t.push(Value{std::move(v)}, {ti}, [ti, bound, gamma](Tape& tp, int self) {
    const RealVec& g = tp.grad_real(self);
    const RealVec& out = tp.real(self);
    RealVec& gt = tp.grad_real(ti);
    for (Eigen::Index i = 0; i < out.size(); ++i) {
      const double s = out[i] / bound;  // sigmoid value
      gt[i] += g[i] * bound * gamma * s * (1.0 - s);
    }
  });
}

// out = bound * tanh(gamma * theta), elementwise; output in (-bound, bound), odd.
inline Var tanh_bounded(Tape& t, Var theta, double bound, double gamma) {
  detail::require(bound > 0.0 && gamma > 0.0, "tanh transform: bound and gamma must be positive");
  const RealVec& th = theta.real();
  RealVec v(th.size());
  for (Eigen::Index i = 0; i < th.size(); ++i) v[i] = bound * std::tanh(gamma * th[i]);
  int ti = theta.id;
  return t.push(Value{std::move(v)}, {ti}, [ti, bound, gamma](Tape& tp, int self) {
    const RealVec& g = tp.grad_real(self);
    const RealVec& out = tp.real(self);
    RealVec& gt = tp.grad_real(ti);
    for (Eigen::Index i = 0; i < out.size(); ++i) {
      const double th_val = out[i] / bound;  // tanh value
      gt[i] += g[i] * bound * gamma * (1.0 - th_val * th_val);
    }
  });
}

// out = A * x for a fixed matrix A.
inline Var matvec(Tape& t, const std::shared_ptr<const Eigen::MatrixXd>& A, Var x) {
  detail::require(A->cols() == x.real().size(), "matvec: shape mismatch");
  RealVec v = (*A) * x.real();
  int xid = x.id;
  auto Ak = A;
  return t.push(Value{std::move(v)}, {xid}, [xid, Ak](Tape& tp, int self) {
    tp.grad_real(xid) += Ak->transpose() * tp.grad_real(self);
  });
}

inline Var matvec(Tape& t, const Eigen::MatrixXd& A, Var x) {
  return matvec(t, std::make_shared<const Eigen::MatrixXd>(A), x);
}

// Concatenation of real vectors.
inline Var concat(Tape& t, const std::vector<Var>& parts) {
  detail::require(!parts.empty(), "concat: no parts");
  Eigen::Index total = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> sizes;
  for (const Var& p : parts) {
    ids.push_back(p.id);
    sizes.push_back(p.real().size());
    total += p.real().size();
  }
  RealVec v(total);
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    v.segment(off, p.real().size()) = p.real();
    off += p.real().size();
  }
  return t.push(Value{std::move(v)}, ids,
                [ids, sizes](Tape& tp, int self) {
                  const RealVec& g = tp.grad_real(self);
                  Eigen::Index off2 = 0;
                  for (std::size_t i = 0; i < ids.size(); ++i) {
                    if (tp.needs(ids[i]))
                      tp.grad_real(ids[i]) += g.segment(off2, sizes[i]);
                    off2 += sizes[i];
                  }
                });
}

// ---------------------------------------------------------------------------
// LeafMap: binds ParameterSet entries to tape leaves, one leaf per name, so
// that every read of the same parameter accumulates into one gradient buffer.

class LeafMap {
 public:
  LeafMap(Tape& tape, const ParameterSet& params) : tape_(&tape), params_(&params) {}

  Var get(const std::string& name) {
    auto it = leaves_.find(name);
    if (it != leaves_.end()) return it->second;
    const Param& p = params_->at(name);
    Var v = tape_->leaf(p.value, p.trainable);
    leaves_.emplace(name, v);
    return v;
  }

  const ParameterSet& params() const { return *params_; }
  Tape& tape() { return *tape_; }

  // Gradients for every trainable parameter; zero for parameters the loss
  // never touched. Throws on non-finite entries.
  std::map<std::string, RealVec> gradients() const {
    std::map<std::string, RealVec> out;
    for (const auto& name : params_->names()) {
      const Param& p = params_->at(name);
      if (!p.trainable) continue;
      auto it = leaves_.find(name);
      RealVec g = (it != leaves_.end() && tape_->has_grad(it->second.id))
                      ? tape_->grad_real(it->second.id)
                      : RealVec(RealVec::Zero(p.value.size()));
      if (!g.allFinite())
        throw std::runtime_error("gradient for '" + name + "' is not finite");
      out.emplace(name, std::move(g));
    }
    return out;
  }

 private:
  Tape* tape_;
  const ParameterSet* params_;
  std::unordered_map<std::string, Var> leaves_;
};

// Convenience wrapper matching the "backward(loss) -> gradient map" contract.
inline std::map<std::string, RealVec> backward_gradients(Tape& tape, Var loss,
                                                         const LeafMap& leaves) {
  tape.backward(loss);
  return leaves.gradients();
}

// ---------------------------------------------------------------------------
// Finite-difference validation harness.

using ModelFn = std::function<Var(Tape&, LeafMap&, const ParameterSet&)>;

struct GradCheckRow {
  std::string param;
  int component = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double abs_err = 0.0;
  double rel_err = 0.0;
  bool pass = true;
};

struct GradCheckOptions {
  double tol_rel = 1e-4;
  double tol_abs = 1e-7;
  // Central-difference step per parameter name; defaults to 1e-4 (drive-scale
  // quantities). Coordinate parameters typically use 1e-3 um.
  std::function<double(const std::string&)> step_for;

  double step(const std::string& name) const {
    return step_for ? step_for(name) : 1e-4;
  }
};

struct GradCheckReport {
  std::vector<GradCheckRow> rows;
  bool all_pass = true;
  double max_abs_err = 0.0;
};

inline double evaluate_model(const ModelFn& model, const ParameterSet& params) {
  Tape tape;
  LeafMap leaves(tape, params);
  Var loss = model(tape, leaves, params);
  return loss.scalar();
}

inline GradCheckReport grad_check(const ModelFn& model, const ParameterSet& params,
                                  const GradCheckOptions& opt = {}) {
  GradCheckReport report;

  Tape tape;
  LeafMap leaves(tape, params);
  Var loss = model(tape, leaves, params);
  auto grads = backward_gradients(tape, loss, leaves);

  for (const auto& name : params.names()) {
    const Param& p = params.at(name);
    if (!p.trainable) continue;
    const RealVec& g = grads.at(name);
    const double h = opt.step(name);
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      ParameterSet plus = params, minus = params;
      plus.at(name).value[i] += h;
      minus.at(name).value[i] -= h;
      const double fp = evaluate_model(model, plus);
      const double fm = evaluate_model(model, minus);
      const double numeric = (fp - fm) / (2.0 * h);
      GradCheckRow row;
      row.param = name;
      row.component = static_cast<int>(i);
      row.analytic = g[i];
      row.numeric = numeric;
      row.abs_err = std::abs(row.analytic - numeric);
      const double scale_ref = std::max(std::abs(row.analytic), std::abs(numeric));
      row.rel_err = scale_ref > 0.0 ? row.abs_err / scale_ref : 0.0;
      row.pass = row.abs_err <= std::max(opt.tol_abs, opt.tol_rel * scale_ref);
      report.all_pass = report.all_pass && row.pass;
      report.max_abs_err = std::max(report.max_abs_err, row.abs_err);
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

}  // namespace rydopt::ad
