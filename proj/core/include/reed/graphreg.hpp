#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "reed/autodiff.hpp"
#include "reed/matrix.hpp"

namespace reed::graph {

using nn::Matrix;
using nn::Var;

inline constexpr double kDefaultTauC = 0.5;
inline constexpr double kDefaultLambdaLU = 0.01;
inline constexpr double kDefaultLambdaUU = 0.005;

enum class NodeRole { labeled, unlabeled };

/// Mini-batch similarity graph. adjacency(i, j) = max(0, cos(z_i, z_j) - tau_c),
/// symmetric with entries in [0, 1 - tau_c].
struct NeighborGraph {
  Matrix adjacency;
  double tau_c = kDefaultTauC;
  std::vector<NodeRole> roles;

  std::size_t size() const noexcept { return adjacency.rows(); }
};

/// Every ordered pair, the diagonal included. Each unordered pair is computed
/// once and mirrored, so the result is exactly symmetric. Throws NumericError
/// on a zero-norm row and ConfigError for tau_c outside [0, 1) or a role list
/// of the wrong length.
NeighborGraph build_neighbor_graph(const Matrix& z, double tau_c = kDefaultTauC,
                                   std::vector<NodeRole> roles = {});

/// p^(1/T) / sum_k p_k^(1/T), with p clamped to >= 1e-12 first.
std::vector<double> sharpen(std::span<const double> p, double temperature);
Matrix sharpen_rows(const Matrix& p, double temperature);
Var sharpen_rows(Var p, double temperature);

struct RegularizerWeights {
  double lambda_lu = kDefaultLambdaLU;
  double lambda_uu = kDefaultLambdaUU;
  /// true: the UU sum runs over ordered pairs (u, v); false halves it.
  bool uu_ordered_pairs = true;
};

/// R = lambda_LU sum_{u in U, v in L} A_uv ||p_u - y_v||^2
///   + lambda_UU sum_{u, v in U} A_uv ||p_u - p_v||^2
///
/// `node_values` has one row per graph node: the sharpened prediction for an
/// unlabeled node and the (one-hot or soft) label for a labeled node.
double graph_regularizer(const NeighborGraph& g, const Matrix& node_values,
                         const RegularizerWeights& w = {});

/// Differentiable form. `sharpened_u` holds the unlabeled nodes' rows in graph
/// order and `labels_l` the labeled nodes' rows in graph order.
Var graph_regularizer(const NeighborGraph& g, Var sharpened_u, const Matrix& labels_l,
                      const RegularizerWeights& w = {});

}  // namespace reed::graph
