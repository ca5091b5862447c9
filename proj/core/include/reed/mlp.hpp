#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "reed/autodiff.hpp"
#include "reed/matrix.hpp"
#include "reed/random.hpp"

namespace reed::nn {

using Label = int;

/// Affine layer y = x W + b with W of shape in x out and b of shape 1 x out.
struct Layer {
  Matrix weight;
  Matrix bias;

  std::size_t in() const noexcept { return weight.rows(); }
  std::size_t out() const noexcept { return weight.cols(); }
  friend bool operator==(const Layer&, const Layer&) = default;
};

using LayerStack = std::vector<Layer>;

/// Encoder h(.; theta) followed by classifier g(.; W).
///
/// The encoder applies ReLU after every layer, so the representation z is a
/// post-activation feature. The classifier applies ReLU between its layers and
/// returns raw logits. The same container holds the contrastive model, with
/// the projection head in place of the classifier.
struct MlpParams {
  LayerStack encoder;
  LayerStack classifier;

  std::size_t input_dim() const;
  std::size_t representation_dim() const;
  std::size_t output_dim() const;
  /// Throws ConfigError unless layer widths chain and every value is finite.
  void validate() const;

  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

/// Which parameter groups receive gradients / updates.
struct GradMask {
  bool encoder = true;
  bool classifier = true;
};

/// He-uniform weights, zero biases. widths = {in, h1, ..., out}.
LayerStack init_stack(std::span<const std::size_t> widths, Rng& rng);

/// Encoder widths {input_dim, hidden...} and a linear classifier to `classes`.
MlpParams init_mlp(std::span<const std::size_t> encoder_widths, std::size_t classes, Rng& rng);

Matrix run_stack(const LayerStack& stack, const Matrix& x, bool relu_last);

struct ForwardResult {
  Matrix z;       // representation
  Matrix logits;  // classifier output
  Matrix probs;   // row-wise softmax of logits
};

ForwardResult mlp_forward(const MlpParams& params, const Matrix& x);

/// Numerically stable softmax; throws NumericError on non-finite input.
std::vector<double> softmax(std::span<const double> logits);
Matrix softmax_rows(const Matrix& logits);

inline constexpr double kLogFloor = 1e-12;

/// -sum_k y_k log(max(p_k, 1e-12)).
double cross_entropy(std::span<const double> p, std::span<const double> y);

/// Row-wise argmax, lowest index on ties.
std::vector<Label> predict(const Matrix& probs);

/// Parameters of one stack bound to a tape.
struct StackVars {
  std::vector<Var> weights;
  std::vector<Var> biases;

  Var apply(Var x, bool relu_last) const;
};

StackVars bind_stack(Tape& tape, const LayerStack& stack, bool trainable);

struct MlpVars {
  StackVars encoder;
  StackVars classifier;

  Var encode(Var x) const { return encoder.apply(x, true); }
  Var classify(Var z) const { return classifier.apply(z, false); }
  Var logits(Var x) const { return classify(encode(x)); }
};

MlpVars bind_mlp(Tape& tape, const MlpParams& params, GradMask trainable = {});

using LossFn = std::function<Var(Tape&, const MlpVars&)>;

struct GradResult {
  double loss = 0.0;
  /// Same shapes as the input parameters; a frozen group is left empty.
  MlpParams grads;
};

/// Reverse-mode gradient of a scalar loss built from the parameters.
/// Throws NumericError when the loss is not finite.
GradResult grad(const MlpParams& params, const LossFn& loss, GradMask mask = {});

/// Flat views over the tensors of the selected groups, weights then bias,
/// encoder layers first.
std::vector<Matrix*> tensors(MlpParams& params, GradMask mask = {});
std::vector<const Matrix*> tensors(const MlpParams& params, GradMask mask = {});

}  // namespace reed::nn
