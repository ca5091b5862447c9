#include "reed/optim.hpp"

#include <cmath>
#include <numbers>

#include "reed/error.hpp"

namespace reed::nn {

OptState make_sgd(double learning_rate, double momentum) {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  OptState s;
  s.kind = OptimizerKind::sgd;
  s.learning_rate = learning_rate;
  s.momentum = momentum;
  return s;
}

OptState make_adam(double learning_rate) {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  OptState s;
  s.kind = OptimizerKind::adam;
  s.learning_rate = learning_rate;
  return s;
}

void optimizer_step(OptState& state, std::span<Matrix* const> params,
                    std::span<const Matrix* const> grads) {
  if (params.size() != grads.size()) throw ConfigError("optimizer_step: parameter/gradient count mismatch");
  if (!(state.learning_rate > 0.0)) throw ConfigError("optimizer_step: learning rate must be positive");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(*grads[i])) throw ConfigError("optimizer_step: gradient shape mismatch");
    if (!grads[i]->all_finite()) throw NumericError("optimizer_step: non-finite gradient");
  }
  if (state.first_moment.empty()) {
    for (const Matrix* p : params) {
      state.first_moment.emplace_back(p->rows(), p->cols());
      if (state.kind == OptimizerKind::adam) state.second_moment.emplace_back(p->rows(), p->cols());
    }
  } else if (state.first_moment.size() != params.size()) {
    throw ConfigError("optimizer_step: parameter set changed between steps");
  }
  ++state.step;
  const double lr = state.learning_rate;

  if (state.kind == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto p = params[i]->values();
      auto g = grads[i]->values();
      auto v = state.first_moment[i].values();
      for (std::size_t k = 0; k < p.size(); ++k) {
        v[k] = state.momentum * v[k] + g[k];
        p[k] -= lr * v[k];
      }
    }
    return;
  }

  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->values();
    auto g = grads[i]->values();
    auto m = state.first_moment[i].values();
    auto v = state.second_moment[i].values();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + state.epsilon);
    }
  }
}

void optimizer_step(OptState& state, MlpParams& params, const MlpParams& grads, GradMask mask) {
  auto p = tensors(params, mask);
  auto g = tensors(grads, mask);
  optimizer_step(state, p, g);
}

double cosine_lr(std::size_t step, std::size_t total_steps, double lr0, double eta_min) {
  if (total_steps == 0) throw ConfigError("cosine_lr: total_steps must be positive");
  if (step > total_steps) throw ConfigError("cosine_lr: step beyond total_steps");
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return eta_min + 0.5 * (lr0 - eta_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

EmaState ema_init(const MlpParams& params, double decay) {
  if (!(decay >= 0.0 && decay < 1.0)) throw ConfigError("ema decay must be in [0, 1)");
  return EmaState{decay, params};
}

void ema_update(EmaState& ema, const MlpParams& params) {
  auto s = tensors(ema.shadow);
  auto p = tensors(params);
  if (s.size() != p.size()) throw ConfigError("ema_update: parameter set mismatch");
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!s[i]->same_shape(*p[i])) throw ConfigError("ema_update: shape mismatch");
    auto sv = s[i]->values();
    auto pv = p[i]->values();
    for (std::size_t k = 0; k < sv.size(); ++k)
      sv[k] = ema.decay * sv[k] + (1.0 - ema.decay) * pv[k];
  }
}

}  // namespace reed::nn
