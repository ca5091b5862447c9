#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "reed/matrix.hpp"

namespace reed::nn {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; only valid while its
/// tape is alive.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Matrix& value() const;
  /// Gradient after Tape::backward; zeros if nothing flowed into this node.
  Matrix grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  /// Value of a 1 x 1 node.
  double scalar() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records a computation over matrices and replays it backwards.
class Tape {
 public:
  using Backward = std::function<void(Tape&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var parameter(Matrix value);

  /// Adds a node computed from earlier nodes. `backward` reads the node's
  /// gradient and accumulates into its inputs; it is dropped when no input
  /// requires a gradient.
  Var record(Matrix value, bool requires_grad, Backward backward);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Mutable gradient buffer, allocated on first use.
  Matrix& grad_buffer(std::size_t id);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded backward step.
  /// Throws NumericError for a non-finite loss.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

// Primitive operations. Every op checks shapes and throws ConfigError on
// mismatch.

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_bt(Var a, Var b);
/// x + b broadcast over rows, b is 1 x cols.
Var add_bias(Var x, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
/// a + c for a constant c of the same shape.
Var add_constant(Var a, const Matrix& c);
/// Elementwise product with a constant.
Var mul_constant(Var a, const Matrix& c);
Var relu(Var a);
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
/// log(max(a, floor)); the gradient is zero where the clamp is active.
Var log_clamped(Var a, double floor);
/// Each row divided by its L2 norm. Zero rows raise NumericError.
Var normalize_rows(Var a);
Var gather_rows(Var a, std::span<const std::size_t> indices);
Var vstack(std::span<const Var> parts);
/// Column vector whose i-th entry is a(i, cols[i]).
Var pick_per_row(Var a, std::span<const std::size_t> cols);
Var sum(Var a);
Var mean(Var a);
/// Sum of squared entries.
Var square_norm(Var a);
/// Mean over rows of -sum_k targets(i,k) * log_softmax(logits)(i,k).
Var soft_cross_entropy(Var logits, const Matrix& targets);
/// Mean over rows of ||a_i - b_i||^2.
Var mean_row_sqdist(Var a, Var b);
/// sum_{i,j} w(i,j) * ||p_i - q_j||^2 for constant weights w (rows(p) x rows(q)).
/// `p` and `q` may be the same node.
Var weighted_pair_sqdist(Var p, Var q, const Matrix& w);

}  // namespace reed::nn
