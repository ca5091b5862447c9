#include "reed/ssrl.hpp"

#include <cmath>
#include <limits>

#include "reed/error.hpp"
#include "reed/optim.hpp"

namespace reed::ssrl {

void ContrastiveConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("ssrl: temperature must be positive");
  if (batch_size < 4) throw ConfigError("ssrl: batch_size must be at least 4");
  if (epochs < 0) throw ConfigError("ssrl: epochs must be non-negative");
  if (!(learning_rate > 0.0)) throw ConfigError("ssrl: learning_rate must be positive");
  if (hidden.empty() || projection_dim == 0) throw ConfigError("ssrl: empty architecture");
  augmentation.validate();
}

namespace {

void check_batch(std::size_t rows, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("nt_xent: temperature must be positive");
  if (rows < 4) throw ConfigError("nt_xent: need at least 4 rows (2 pairs) to have negatives");
  if (rows % 2 != 0) throw ConfigError("nt_xent: rows must come in view pairs");
}

}  // namespace

Var nt_xent_loss(Var projected, double temperature) {
  const std::size_t n = projected.rows();
  check_batch(n, temperature);
  Var zn = nn::normalize_rows(projected);
  Var sim = nn::scale(nn::matmul_bt(zn, zn), 1.0 / temperature);
  Matrix self_mask(n, n);
  for (std::size_t i = 0; i < n; ++i) self_mask(i, i) = -std::numeric_limits<double>::infinity();
  Var log_prob = nn::log_softmax_rows(nn::add_constant(sim, self_mask));
  std::vector<std::size_t> positive(n);
  for (std::size_t i = 0; i < n; ++i) positive[i] = i ^ 1U;
  return nn::scale(nn::mean(nn::pick_per_row(log_prob, positive)), -1.0);
}

double nt_xent_loss(const Matrix& projected, double temperature) {
  nn::Tape tape;
  return nt_xent_loss(tape.constant(projected), temperature).scalar();
}

Matrix embed(const LayerStack& encoder, const Matrix& x) { return nn::run_stack(encoder, x, true); }

namespace {

/// Two augmented views per selected row, interleaved.
Matrix make_views(const Matrix& x, std::span<const std::size_t> rows,
                  const data::AugmentationSpec& aug, Rng& rng) {
  Matrix views(2 * rows.size(), x.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    for (std::size_t v = 0; v < 2; ++v) {
      auto out = data::augment(x.row(rows[k]), aug, rng);
      std::copy(out.begin(), out.end(), views.row(2 * k + v).begin());
    }
  }
  return views;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> order = rng.permutation(n);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t end = std::min(n, start + batch);
    if (end - start < 2) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

}  // namespace

EncoderResult train_encoder(const Matrix& x, const ContrastiveConfig& config, std::uint64_t seed) {
  config.validate();
  if (x.rows() < 2) throw ConfigError("ssrl: need at least 2 samples");
  if (!x.all_finite()) throw NumericError("ssrl: non-finite features");

  Rng init_rng(derive_seed(seed, 11));
  std::vector<std::size_t> widths{x.cols()};
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  nn::MlpParams model;
  model.encoder = nn::init_stack(widths, init_rng);
  const std::size_t head[] = {widths.back(), config.projection_dim};
  model.classifier = nn::init_stack(head, init_rng);

  const auto batch = static_cast<std::size_t>(config.batch_size);
  const auto loss_fn = [&config](const Matrix& views) {
    return [&config, &views](nn::Tape& tape, const nn::MlpVars& vars) {
      return nt_xent_loss(vars.logits(tape.constant(views)), config.temperature);
    };
  };

  EncoderResult result;
  {
    Rng eval_rng(derive_seed(seed, 12));
    double total = 0.0;
    auto batches = make_batches(x.rows(), batch, eval_rng);
    for (const auto& rows : batches) {
      Matrix views = make_views(x, rows, config.augmentation, eval_rng);
      total += nt_xent_loss(nn::run_stack(model.classifier, ssrl::embed(model.encoder, views), false),
                            config.temperature);
    }
    result.log.push_back({0, total / static_cast<double>(batches.size())});
  }

  Rng rng(derive_seed(seed, 13));
  const std::size_t steps_per_epoch = (x.rows() + batch - 1) / batch;
  const std::size_t total_steps = std::max<std::size_t>(1, steps_per_epoch * static_cast<std::size_t>(config.epochs));
  nn::OptState opt = nn::make_adam(config.learning_rate);
  std::size_t step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    double total = 0.0;
    auto batches = make_batches(x.rows(), batch, rng);
    for (const auto& rows : batches) {
      Matrix views = make_views(x, rows, config.augmentation, rng);
      opt.learning_rate = nn::cosine_lr(std::min(step, total_steps - 1), total_steps,
                                        config.learning_rate, config.eta_min);
      auto g = nn::grad(model, loss_fn(views));
      nn::optimizer_step(opt, model, g.grads);
      total += g.loss;
      ++step;
    }
    result.log.push_back({epoch, total / static_cast<double>(batches.size())});
  }
  result.encoder = std::move(model.encoder);
  result.projection_head = std::move(model.classifier);
  return result;
}

}  // namespace reed::ssrl
