#include "reed/graphreg.hpp"

#include <algorithm>
#include <cmath>

#include "reed/error.hpp"
#include "reed/mlp.hpp"

namespace reed::graph {

NeighborGraph build_neighbor_graph(const Matrix& z, double tau_c, std::vector<NodeRole> roles) {
  if (!(tau_c >= 0.0 && tau_c < 1.0)) throw ConfigError("neighbor graph: tau_c must be in [0, 1)");
  const std::size_t n = z.rows();
  if (roles.empty()) roles.assign(n, NodeRole::unlabeled);
  if (roles.size() != n) throw ConfigError("neighbor graph: one role per node required");

  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : z.row(i)) s += v * v;
    norms[i] = std::sqrt(s);
    if (!(norms[i] > 0.0)) throw NumericError("neighbor graph: zero-norm representation row");
  }
  NeighborGraph g{Matrix(n, n), tau_c, std::move(roles)};
  for (std::size_t i = 0; i < n; ++i) {
    auto zi = z.row(i);
    for (std::size_t j = i; j < n; ++j) {
      auto zj = z.row(j);
      double dot = 0.0;
      for (std::size_t k = 0; k < zi.size(); ++k) dot += zi[k] * zj[k];
      const double sim = std::clamp(dot / (norms[i] * norms[j]), -1.0, 1.0);
      const double a = std::max(0.0, sim - tau_c);
      g.adjacency(i, j) = a;
      g.adjacency(j, i) = a;
    }
  }
  return g;
}

std::vector<double> sharpen(std::span<const double> p, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("sharpen: temperature must be positive");
  std::vector<double> logits(p.size());
  for (std::size_t k = 0; k < p.size(); ++k)
    logits[k] = std::log(std::max(p[k], nn::kLogFloor)) / temperature;
  return nn::softmax(logits);
}

Matrix sharpen_rows(const Matrix& p, double temperature) {
  Matrix out(p.rows(), p.cols());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    auto q = sharpen(p.row(i), temperature);
    std::copy(q.begin(), q.end(), out.row(i).begin());
  }
  return out;
}

Var sharpen_rows(Var p, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("sharpen: temperature must be positive");
  return nn::softmax_rows(nn::scale(nn::log_clamped(p, nn::kLogFloor), 1.0 / temperature));
}

namespace {

struct Partition {
  std::vector<std::size_t> labeled;
  std::vector<std::size_t> unlabeled;
};

Partition partition(const NeighborGraph& g) {
  if (g.roles.size() != g.size()) throw ConfigError("graph regularizer: one role per node required");
  Partition p;
  for (std::size_t i = 0; i < g.roles.size(); ++i)
    (g.roles[i] == NodeRole::labeled ? p.labeled : p.unlabeled).push_back(i);
  return p;
}

Matrix sub_adjacency(const Matrix& a, std::span<const std::size_t> rows, std::span<const std::size_t> cols) {
  Matrix out(rows.size(), cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = a(rows[i], cols[j]);
  return out;
}

void check_weights(const RegularizerWeights& w) {
  if (!(w.lambda_lu >= 0.0 && w.lambda_uu >= 0.0))
    throw ConfigError("graph regularizer: lambda weights must be non-negative");
}

double sqdist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

}  // namespace

double graph_regularizer(const NeighborGraph& g, const Matrix& node_values, const RegularizerWeights& w) {
  check_weights(w);
  if (node_values.rows() != g.size()) throw ConfigError("graph regularizer: one value row per node required");
  const Partition part = partition(g);
  for (std::size_t v : part.labeled) {
    double mass = 0.0;
    for (double y : node_values.row(v)) {
      if (!(y >= 0.0 && y <= 1.0)) throw ConfigError("graph regularizer: labeled node value is not a distribution");
      mass += y;
    }
    if (std::abs(mass - 1.0) > 1e-9) throw ConfigError("graph regularizer: labeled node value is not a distribution");
  }
  double lu = 0.0;
  for (std::size_t u : part.unlabeled)
    for (std::size_t v : part.labeled) {
      const double a = g.adjacency(u, v);
      if (a != 0.0) lu += a * sqdist(node_values.row(u), node_values.row(v));
    }
  double uu = 0.0;
  for (std::size_t u : part.unlabeled)
    for (std::size_t v : part.unlabeled) {
      const double a = g.adjacency(u, v);
      if (a != 0.0 && u != v) uu += a * sqdist(node_values.row(u), node_values.row(v));
    }
  if (!w.uu_ordered_pairs) uu *= 0.5;
  return w.lambda_lu * lu + w.lambda_uu * uu;
}

Var graph_regularizer(const NeighborGraph& g, Var sharpened_u, const Matrix& labels_l,
                      const RegularizerWeights& w) {
  check_weights(w);
  const Partition part = partition(g);
  if (sharpened_u.rows() != part.unlabeled.size() || labels_l.rows() != part.labeled.size())
    throw ConfigError("graph regularizer: node rows do not match roles");
  nn::Tape& tape = sharpened_u.tape();
  Var total = tape.constant(Matrix(1, 1));
  if (part.unlabeled.empty()) return total;
  if (!part.labeled.empty() && w.lambda_lu > 0.0) {
    if (labels_l.cols() != sharpened_u.cols()) throw ConfigError("graph regularizer: class count mismatch");
    Matrix a_ul = sub_adjacency(g.adjacency, part.unlabeled, part.labeled);
    Var y = tape.constant(labels_l);
    total = nn::add(total, nn::scale(nn::weighted_pair_sqdist(sharpened_u, y, a_ul), w.lambda_lu));
  }
  if (w.lambda_uu > 0.0) {
    Matrix a_uu = sub_adjacency(g.adjacency, part.unlabeled, part.unlabeled);
    for (std::size_t i = 0; i < a_uu.rows(); ++i) a_uu(i, i) = 0.0;
    const double factor = w.uu_ordered_pairs ? 1.0 : 0.5;
    total = nn::add(total, nn::scale(nn::weighted_pair_sqdist(sharpened_u, sharpened_u, a_uu),
                                     w.lambda_uu * factor));
  }
  return total;
}

}  // namespace reed::graph
