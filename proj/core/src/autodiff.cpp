#include "reed/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "reed/error.hpp"

namespace reed::nn {

const Matrix& Var::value() const { return tape_->value(id_); }
Matrix Var::grad() const {
  const Matrix& g = tape_->grad(id_);
  return g.empty() ? Matrix(value().rows(), value().cols()) : g;
}

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw ConfigError("scalar(): node is not 1 x 1");
  return v(0, 0);
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, bool requires_grad, Backward backward) {
  if (!requires_grad) backward = nullptr;
  nodes_.push_back(Node{std::move(value), {}, requires_grad, std::move(backward)});
  return Var(this, nodes_.size() - 1);
}

const Matrix& Tape::grad(std::size_t id) const {
  return nodes_[id].grad;
}

Matrix& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape_ != this) throw ConfigError("backward: variable belongs to another tape");
  const Matrix& v = nodes_[loss.id()].value;
  if (v.rows() != 1 || v.cols() != 1) throw ConfigError("backward: loss must be 1 x 1");
  if (!std::isfinite(v(0, 0))) throw NumericError("backward: loss is not finite");
  for (auto& n : nodes_) n.grad = Matrix();
  grad_buffer(loss.id())(0, 0) = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && !n.grad.empty()) n.backward(*this);
  }
}

namespace {

bool any_requires(std::initializer_list<Var> vars) {
  return std::any_of(vars.begin(), vars.end(),
                     [](Var v) { return v.tape().requires_grad(v.id()); });
}

void same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw ConfigError("operands recorded on different tapes");
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) throw ConfigError(std::string(op) + ": shape mismatch");
}

/// Accumulates g into the gradient of `target` if it participates.
void accumulate(Tape& t, std::size_t target, const Matrix& g) {
  if (!t.requires_grad(target)) return;
  auto dst = t.grad_buffer(target).values();
  auto src = g.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Matrix softmax_of(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row(i);
    auto o = out.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t k = 0; k < in.size(); ++k) z += (o[k] = std::exp(in[k] - mx));
    for (auto& e : o) e /= z;
  }
  return out;
}

}  // namespace

Var matmul(Var a, Var b) {
  same_tape(a, b);
  Tape& t = a.tape();
  const std::size_t ia = a.id(), ib = b.id();
  Matrix out = nn::matmul(a.value(), b.value());
  std::size_t self = t.size();
  return t.record(std::move(out), any_requires({a, b}), [ia, ib, self](Tape& tp) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) accumulate(tp, ia, matmul_bt(g, tp.value(ib)));
    if (tp.requires_grad(ib)) accumulate(tp, ib, matmul_at(tp.value(ia), g));
  });
}

Var matmul_bt(Var a, Var b) {
  same_tape(a, b);
  Tape& t = a.tape();
  const std::size_t ia = a.id(), ib = b.id();
  Matrix out = nn::matmul_bt(a.value(), b.value());
  std::size_t self = t.size();
  return t.record(std::move(out), any_requires({a, b}), [ia, ib, self](Tape& tp) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) accumulate(tp, ia, nn::matmul(g, tp.value(ib)));
    if (tp.requires_grad(ib)) accumulate(tp, ib, matmul_at(g, tp.value(ia)));
  });
}

Var add_bias(Var x, Var b) {
  same_tape(x, b);
  const Matrix& xv = x.value();
  const Matrix& bv = b.value();
  if (bv.rows() != 1 || bv.cols() != xv.cols()) throw ConfigError("add_bias: shape mismatch");
  Matrix out = xv;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bv(0, j);
  }
  Tape& t = x.tape();
  const std::size_t ix = x.id(), ib = b.id();
  std::size_t self = t.size();
  return t.record(std::move(out), any_requires({x, b}), [ix, ib, self](Tape& tp) {
    const Matrix& g = tp.grad(self);
    accumulate(tp, ix, g);
    if (tp.requires_grad(ib)) {
      Matrix& db = tp.grad_buffer(ib);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) db(0, j) += g(i, j);
    }
  });
}

Var add(Var a, Var b) {
  same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Matrix out = a.value();
  auto o = out.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  Tape& t = a.tape();
  const std::size_t ia = a.id(), ib = b.id();
  std::size_t self = t.size();
  return t.record(std::move(out), any_requires({a, b}), [ia, ib, self](Tape& tp) {
    const Matrix& g = tp.grad(self);
    accumulate(tp, ia, g);
    accumulate(tp, ib, g);
  });
}

Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var scale(Var a, double s) {
  Matrix out = a.value();
  for (auto& v : out.values()) v *= s;
  Tape& t = a.tape();
  const std::size_t ia = a.id();
  std::size_t self = t.size();
  return t.record(std::move(out), any_requires({a}), [ia, s, self](Tape& tp) {
    Matrix g = tp.grad(self);
    for (auto& v : g.values()) v *= s;
    accumulate(tp, ia, g);
  });
}

Var add_constant(Var a, const Matrix& c) {
  require_same_shape(a.value(), c, "add_constant");
  Matrix out = a.value();
  auto o = out.values();
  auto cv = c.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += cv[i];
  Tape& t = a.tape();
  const std::size_t ia = a.id();
  std::size_t self = t.size();
  return t.record(std::move(out), any_requires({a}),
                  [ia, self](Tape& tp) { accumulate(tp, ia, tp.grad(self)); });
}

Var mul_constant(Var a, const Matrix& c) {
  require_same_shape(a.value(), c, "mul_constant");
  Matrix out = a.value();
  auto o = out.values();
  auto cv = c.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= cv[i];
  Tape& t = a.tape();
  const std::size_t ia = a.id();
  std::size_t self = t.size();
  return t.record(std::move(out), any_requires({a}), [ia, c, self](Tape& tp) {
    Matrix g = tp.grad(self);
    auto gv = g.values();
    auto cv2 = c.values();
    for (std::size_t i = 0; i < gv.size(); ++i) gv[i] *= cv2[i];
    accumulate(tp, ia, g);
  });
}

Var relu(Var a) {
  Matrix out = a.value();
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  Tape& t = a.tape();
  const std::size_t ia = a.id();
  std::size_t self = t.size();
  return t.record(std::move(out), any_requires({a}), [ia, self](Tape& tp) {
    Matrix g = tp.grad(self);
    auto gv = g.values();
    auto xv = tp.value(ia).values();
    for (std::size_t i = 0; i < gv.size(); ++i)
      if (!(xv[i] > 0.0)) gv[i] = 0.0;
    accumulate(tp, ia, g);
  });
}

Var softmax_rows(Var a) {
  Matrix out = softmax_of(a.value());
  Tape& t = a.tape();
  const std::size_t ia = a.id();
  std::size_t self = t.size();
  return t.record(std::move(out), any_requires({a}), [ia, self](Tape& tp) {
    const Matrix& s = tp.value(self);
    Matrix g = tp.grad(self);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      auto gr = g.row(i);
      auto sr = s.row(i);
      double dot = 0.0;
      for (std::size_t k = 0; k < gr.size(); ++k) dot += gr[k] * sr[k];
      for (std::size_t k = 0; k < gr.size(); ++k) gr[k] = sr[k] * (gr[k] - dot);
    }
    accumulate(tp, ia, g);
  });
}

Var log_softmax_rows(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row(i);
    auto o = out.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (double v : in) z += std::exp(v - mx);
    const double lz = mx + std::log(z);
    for (std::size_t k = 0; k < in.size(); ++k) o[k] = in[k] - lz;
  }
  Tape& t = a.tape();
  const std::size_t ia = a.id();
  std::size_t self = t.size();
  return t.record(std::move(out), any_requires({a}), [ia, self](Tape& tp) {
    const Matrix& ls = tp.value(self);
    Matrix g = tp.grad(self);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      auto gr = g.row(i);
      auto lr = ls.row(i);
      double gs = 0.0;
      for (double v : gr) gs += v;
      for (std::size_t k = 0; k < gr.size(); ++k) gr[k] -= std::exp(lr[k]) * gs;
    }
    accumulate(tp, ia, g);
  });
}

Var log_clamped(Var a, double floor) {
  Matrix out = a.value();
  for (auto& v : out.values()) v = std::log(std::max(v, floor));
  Tape& t = a.tape();
  const std::size_t ia = a.id();
  std::size_t self = t.size();
  return t.record(std::move(out), any_requires({a}), [ia, floor, self](Tape& tp) {
    Matrix g = tp.grad(self);
    auto gv = g.values();
    auto xv = tp.value(ia).values();
    for (std::size_t i = 0; i < gv.size(); ++i) gv[i] = xv[i] > floor ? gv[i] / xv[i] : 0.0;
    accumulate(tp, ia, g);
  });
}

Var normalize_rows(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  std::vector<double> norms(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (double v : x.row(i)) s += v * v;
    const double n = std::sqrt(s);
    if (!(n > 0.0)) throw NumericError("normalize_rows: zero-norm row");
    norms[i] = n;
    auto o = out.row(i);
    auto in = x.row(i);
    for (std::size_t k = 0; k < in.size(); ++k) o[k] = in[k] / n;
  }
  Tape& t = a.tape();
  const std::size_t ia = a.id();
  std::size_t self = t.size();
  return t.record(std::move(out), any_requires({a}),
                  [ia, self, norms = std::move(norms)](Tape& tp) {
                    const Matrix& y = tp.value(self);
                    Matrix g = tp.grad(self);
                    for (std::size_t i = 0; i < g.rows(); ++i) {
                      auto gr = g.row(i);
                      auto yr = y.row(i);
                      double dot = 0.0;
                      for (std::size_t k = 0; k < gr.size(); ++k) dot += gr[k] * yr[k];
                      for (std::size_t k = 0; k < gr.size(); ++k)
                        gr[k] = (gr[k] - yr[k] * dot) / norms[i];
                    }
                    accumulate(tp, ia, g);
                  });
}

Var gather_rows(Var a, std::span<const std::size_t> indices) {
  Matrix out = nn::gather_rows(a.value(), indices);
  Tape& t = a.tape();
  const std::size_t ia = a.id();
  std::size_t self = t.size();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return t.record(std::move(out), any_requires({a}), [ia, self, idx = std::move(idx)](Tape& tp) {
    const Matrix& g = tp.grad(self);
    Matrix& da = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto src = g.row(i);
      auto dst = da.row(idx[i]);
      for (std::size_t k = 0; k < src.size(); ++k) dst[k] += src[k];
    }
  });
}

Var vstack(std::span<const Var> parts) {
  if (parts.empty()) throw ConfigError("vstack: no inputs");
  Tape& t = parts.front().tape();
  std::vector<Matrix> values;
  std::vector<std::size_t> ids;
  bool req = false;
  for (const Var& p : parts) {
    if (&p.tape() != &t) throw ConfigError("operands recorded on different tapes");
    values.push_back(p.value());
    ids.push_back(p.id());
    req = req || t.requires_grad(p.id());
  }
  Matrix out = nn::vstack(values);
  std::size_t self = t.size();
  return t.record(std::move(out), req, [ids = std::move(ids), self](Tape& tp) {
    const Matrix& g = tp.grad(self);
    std::size_t offset = 0;
    for (std::size_t id : ids) {
      const std::size_t r = tp.value(id).rows();
      if (tp.requires_grad(id)) {
        Matrix& d = tp.grad_buffer(id);
        for (std::size_t i = 0; i < r; ++i) {
          auto src = g.row(offset + i);
          auto dst = d.row(i);
          for (std::size_t k = 0; k < src.size(); ++k) dst[k] += src[k];
        }
      }
      offset += r;
    }
  });
}

Var pick_per_row(Var a, std::span<const std::size_t> cols) {
  const Matrix& x = a.value();
  if (cols.size() != x.rows()) throw ConfigError("pick_per_row: one column per row required");
  Matrix out(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (cols[i] >= x.cols()) throw ConfigError("pick_per_row: column out of range");
    out(i, 0) = x(i, cols[i]);
  }
  Tape& t = a.tape();
  const std::size_t ia = a.id();
  std::size_t self = t.size();
  std::vector<std::size_t> c(cols.begin(), cols.end());
  return t.record(std::move(out), any_requires({a}), [ia, self, c = std::move(c)](Tape& tp) {
    const Matrix& g = tp.grad(self);
    Matrix& da = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < c.size(); ++i) da(i, c[i]) += g(i, 0);
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  Tape& t = a.tape();
  const std::size_t ia = a.id();
  std::size_t self = t.size();
  return t.record(Matrix(1, 1, s), any_requires({a}), [ia, self](Tape& tp) {
    const double g = tp.grad(self)(0, 0);
    for (auto& v : tp.grad_buffer(ia).values()) v += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ConfigError("mean: empty input");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var square_norm(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v * v;
  Tape& t = a.tape();
  const std::size_t ia = a.id();
  std::size_t self = t.size();
  return t.record(Matrix(1, 1, s), any_requires({a}), [ia, self](Tape& tp) {
    const double g = tp.grad(self)(0, 0);
    auto x = tp.value(ia).values();
    auto d = tp.grad_buffer(ia).values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += 2.0 * g * x[i];
  });
}

Var soft_cross_entropy(Var logits, const Matrix& targets) {
  const Matrix& x = logits.value();
  require_same_shape(x, targets, "soft_cross_entropy");
  if (x.rows() == 0) throw ConfigError("soft_cross_entropy: empty batch");
  const double n = static_cast<double>(x.rows());
  double total = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (double v : in) z += std::exp(v - mx);
    const double lz = mx + std::log(z);
    auto y = targets.row(i);
    for (std::size_t k = 0; k < in.size(); ++k) total -= y[k] * (in[k] - lz);
  }
  Tape& t = logits.tape();
  const std::size_t ia = logits.id();
  std::size_t self = t.size();
  return t.record(Matrix(1, 1, total / n), any_requires({logits}),
                  [ia, self, targets, n](Tape& tp) {
                    const double g = tp.grad(self)(0, 0) / n;
                    Matrix s = softmax_of(tp.value(ia));
                    Matrix& d = tp.grad_buffer(ia);
                    for (std::size_t i = 0; i < s.rows(); ++i) {
                      auto y = targets.row(i);
                      double mass = 0.0;
                      for (double v : y) mass += v;
                      auto sr = s.row(i);
                      auto dr = d.row(i);
                      for (std::size_t k = 0; k < sr.size(); ++k)
                        dr[k] += g * (sr[k] * mass - y[k]);
                    }
                  });
}

Var mean_row_sqdist(Var a, Var b) {
  same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require_same_shape(av, bv, "mean_row_sqdist");
  if (av.rows() == 0) throw ConfigError("mean_row_sqdist: empty batch");
  const double n = static_cast<double>(av.rows());
  double total = 0.0;
  auto x = av.values();
  auto y = bv.values();
  for (std::size_t i = 0; i < x.size(); ++i) total += (x[i] - y[i]) * (x[i] - y[i]);
  Tape& t = a.tape();
  const std::size_t ia = a.id(), ib = b.id();
  std::size_t self = t.size();
  return t.record(Matrix(1, 1, total / n), any_requires({a, b}), [ia, ib, self, n](Tape& tp) {
    const double g = 2.0 * tp.grad(self)(0, 0) / n;
    Matrix diff = tp.value(ia);
    auto dv = diff.values();
    auto yv = tp.value(ib).values();
    for (std::size_t i = 0; i < dv.size(); ++i) dv[i] = g * (dv[i] - yv[i]);
    accumulate(tp, ia, diff);
    if (tp.requires_grad(ib)) {
      for (auto& v : dv) v = -v;
      accumulate(tp, ib, diff);
    }
  });
}

Var weighted_pair_sqdist(Var p, Var q, const Matrix& w) {
  same_tape(p, q);
  const Matrix& pv = p.value();
  const Matrix& qv = q.value();
  if (pv.cols() != qv.cols() || w.rows() != pv.rows() || w.cols() != qv.rows())
    throw ConfigError("weighted_pair_sqdist: shape mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < pv.rows(); ++i) {
    auto pr = pv.row(i);
    for (std::size_t j = 0; j < qv.rows(); ++j) {
      const double wij = w(i, j);
      if (wij == 0.0) continue;
      auto qr = qv.row(j);
      double d2 = 0.0;
      for (std::size_t k = 0; k < pr.size(); ++k) d2 += (pr[k] - qr[k]) * (pr[k] - qr[k]);
      total += wij * d2;
    }
  }
  Tape& t = p.tape();
  const std::size_t ip = p.id(), iq = q.id();
  std::size_t self = t.size();
  return t.record(Matrix(1, 1, total), any_requires({p, q}), [ip, iq, self, w](Tape& tp) {
    const double g = 2.0 * tp.grad(self)(0, 0);
    const Matrix& pm = tp.value(ip);
    const Matrix& qm = tp.value(iq);
    if (tp.requires_grad(ip)) {
      // d/dp_i = 2 (rowsum_i * p_i - (W Q)_i)
      Matrix wq = nn::matmul(w, qm);
      Matrix d(pm.rows(), pm.cols());
      for (std::size_t i = 0; i < pm.rows(); ++i) {
        double rs = 0.0;
        for (double v : w.row(i)) rs += v;
        for (std::size_t k = 0; k < pm.cols(); ++k) d(i, k) = g * (rs * pm(i, k) - wq(i, k));
      }
      accumulate(tp, ip, d);
    }
    if (tp.requires_grad(iq)) {
      // d/dq_j = 2 (colsum_j * q_j - (W^T P)_j)
      Matrix wtp = matmul_at(w, pm);
      Matrix d(qm.rows(), qm.cols());
      for (std::size_t j = 0; j < qm.rows(); ++j) {
        double cs = 0.0;
        for (std::size_t i = 0; i < w.rows(); ++i) cs += w(i, j);
        for (std::size_t k = 0; k < qm.cols(); ++k) d(j, k) = g * (cs * qm(j, k) - wtp(j, k));
      }
      accumulate(tp, iq, d);
    }
  });
}

}  // namespace reed::nn
