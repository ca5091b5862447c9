#include "reed/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "reed/error.hpp"

namespace reed::nn {

namespace {

void check_stack(const LayerStack& stack, const char* name) {
  for (std::size_t i = 0; i < stack.size(); ++i) {
    const Layer& l = stack[i];
    const std::string where = std::string(name) + "[" + std::to_string(i) + "]";
    if (l.bias.rows() != 1 || l.bias.cols() != l.out())
      throw ConfigError(where + ": bias shape does not match weight");
    if (i > 0 && stack[i - 1].out() != l.in())
      throw ConfigError(where + ": input width does not chain");
    if (!l.weight.all_finite() || !l.bias.all_finite())
      throw NumericError(where + ": non-finite parameter");
  }
}

}  // namespace

std::size_t MlpParams::input_dim() const {
  return encoder.empty() ? (classifier.empty() ? 0 : classifier.front().in()) : encoder.front().in();
}

std::size_t MlpParams::representation_dim() const {
  return encoder.empty() ? input_dim() : encoder.back().out();
}

std::size_t MlpParams::output_dim() const {
  return classifier.empty() ? representation_dim() : classifier.back().out();
}

void MlpParams::validate() const {
  check_stack(encoder, "encoder");
  check_stack(classifier, "classifier");
  if (!encoder.empty() && !classifier.empty() && encoder.back().out() != classifier.front().in())
    throw ConfigError("classifier input width does not match representation width");
}

LayerStack init_stack(std::span<const std::size_t> widths, Rng& rng) {
  LayerStack stack;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const std::size_t in = widths[i], out = widths[i + 1];
    if (in == 0 || out == 0) throw ConfigError("init_stack: zero layer width");
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    Layer l{Matrix(in, out), Matrix(1, out)};
    for (auto& w : l.weight.values()) w = rng.uniform(-bound, bound);
    stack.push_back(std::move(l));
  }
  return stack;
}

MlpParams init_mlp(std::span<const std::size_t> encoder_widths, std::size_t classes, Rng& rng) {
  if (encoder_widths.size() < 2) throw ConfigError("init_mlp: encoder needs at least one layer");
  MlpParams p;
  p.encoder = init_stack(encoder_widths, rng);
  const std::size_t head[] = {encoder_widths.back(), classes};
  p.classifier = init_stack(head, rng);
  return p;
}

Matrix run_stack(const LayerStack& stack, const Matrix& x, bool relu_last) {
  Matrix h = x;
  for (std::size_t i = 0; i < stack.size(); ++i) {
    const Layer& l = stack[i];
    if (h.cols() != l.in()) throw ConfigError("forward: input width does not match layer");
    h = matmul(h, l.weight);
    for (std::size_t r = 0; r < h.rows(); ++r) {
      auto row = h.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += l.bias(0, c);
    }
    if (relu_last || i + 1 < stack.size())
      for (auto& v : h.values()) v = v > 0.0 ? v : 0.0;
  }
  return h;
}

ForwardResult mlp_forward(const MlpParams& params, const Matrix& x) {
  if (x.cols() != params.input_dim()) throw ConfigError("mlp_forward: input width mismatch");
  ForwardResult r;
  r.z = run_stack(params.encoder, x, true);
  r.logits = run_stack(params.classifier, r.z, false);
  r.probs = softmax_rows(r.logits);
  return r;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw ConfigError("softmax: empty input");
  for (double v : logits)
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite logit");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double z = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) z += (out[k] = std::exp(logits[k] - mx));
  for (auto& v : out) v /= z;
  return out;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto p = softmax(logits.row(i));
    std::copy(p.begin(), p.end(), out.row(i).begin());
  }
  return out;
}

double cross_entropy(std::span<const double> p, std::span<const double> y) {
  if (p.size() != y.size()) throw ConfigError("cross_entropy: dimension mismatch");
  double loss = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k)
    if (y[k] != 0.0) loss -= y[k] * std::log(std::max(p[k], kLogFloor));
  return loss;
}

std::vector<Label> predict(const Matrix& probs) {
  std::vector<Label> out(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    auto r = probs.row(i);
    out[i] = static_cast<Label>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

Var StackVars::apply(Var x, bool relu_last) const {
  Var h = x;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    h = add_bias(matmul(h, weights[i]), biases[i]);
    if (relu_last || i + 1 < weights.size()) h = relu(h);
  }
  return h;
}

StackVars bind_stack(Tape& tape, const LayerStack& stack, bool trainable) {
  StackVars v;
  for (const Layer& l : stack) {
    v.weights.push_back(trainable ? tape.parameter(l.weight) : tape.constant(l.weight));
    v.biases.push_back(trainable ? tape.parameter(l.bias) : tape.constant(l.bias));
  }
  return v;
}

MlpVars bind_mlp(Tape& tape, const MlpParams& params, GradMask trainable) {
  return {bind_stack(tape, params.encoder, trainable.encoder),
          bind_stack(tape, params.classifier, trainable.classifier)};
}

namespace {

LayerStack collect(const StackVars& vars) {
  LayerStack out;
  for (std::size_t i = 0; i < vars.weights.size(); ++i)
    out.push_back({vars.weights[i].grad(), vars.biases[i].grad()});
  return out;
}

}  // namespace

GradResult grad(const MlpParams& params, const LossFn& loss, GradMask mask) {
  Tape tape;
  MlpVars vars = bind_mlp(tape, params, mask);
  Var l = loss(tape, vars);
  tape.backward(l);
  GradResult r;
  r.loss = l.scalar();
  if (mask.encoder) r.grads.encoder = collect(vars.encoder);
  if (mask.classifier) r.grads.classifier = collect(vars.classifier);
  return r;
}

std::vector<Matrix*> tensors(MlpParams& params, GradMask mask) {
  std::vector<Matrix*> out;
  auto add = [&out](LayerStack& s) {
    for (auto& l : s) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
  };
  if (mask.encoder) add(params.encoder);
  if (mask.classifier) add(params.classifier);
  return out;
}

std::vector<const Matrix*> tensors(const MlpParams& params, GradMask mask) {
  auto mut = tensors(const_cast<MlpParams&>(params), mask);
  return {mut.begin(), mut.end()};
}

}  // namespace reed::nn
