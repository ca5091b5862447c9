#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "reed/matrix.hpp"
#include "reed/mlp.hpp"

namespace reed::nn {

enum class OptimizerKind { sgd, adam };

struct OptState {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double momentum = 0.0;  // SGD only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t step = 0;
  std::vector<Matrix> first_moment;   // SGD velocity or Adam m
  std::vector<Matrix> second_moment;  // Adam v
};

OptState make_sgd(double learning_rate, double momentum = 0.0);
OptState make_adam(double learning_rate);

/// In-place update of `params` with `grads` (matched by position). Moment
/// buffers are allocated on the first call and must keep their shapes.
/// Throws NumericError on a non-finite gradient.
void optimizer_step(OptState& state, std::span<Matrix* const> params,
                    std::span<const Matrix* const> grads);

/// Convenience overload for the groups selected by `mask`; `grads` comes from
/// nn::grad with the same mask.
void optimizer_step(OptState& state, MlpParams& params, const MlpParams& grads, GradMask mask = {});

/// Cosine annealing from lr0 at step 0 down to eta_min at total_steps.
double cosine_lr(std::size_t step, std::size_t total_steps, double lr0, double eta_min);

struct EmaState {
  double decay = 0.999;
  MlpParams shadow;
};

EmaState ema_init(const MlpParams& params, double decay);
/// shadow <- decay * shadow + (1 - decay) * params
void ema_update(EmaState& ema, const MlpParams& params);

}  // namespace reed::nn
